//! Vocal-tract-like numerical phantoms.
//!
//! A head-sized ellipse holds a few deformed tissue blobs with
//! piecewise-constant intensity and one elongated, nearly empty airway.
//! The magnitude is smoothed with a narrow Gaussian and kept away from the
//! FOV border, so the image carries no content the spiral disk cannot encode.

use std::f64::consts::{FRAC_PI_4, TAU};

use num_complex::Complex64;

use crate::encoder::{make_synthetic_field_map, FieldMap, FieldMapStyle};
use crate::tensors::{ComplexImage, Rng};

/// Gaussian smoothing of the rendered magnitude, in pixels.
pub const EDGE_SIGMA_PX: f64 = 1.5;
/// Magnitude (before smoothing) above which a pixel counts as tissue.
const TISSUE_THRESHOLD: f64 = 0.1;
const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ComplexImage,
    pub tissue: Vec<bool>,
    pub boundary: Vec<bool>,
    pub fieldmap: FieldMap,
}

impl Phantom {
    pub fn fill_fraction(&self) -> f64 {
        self.tissue.iter().filter(|&&t| t).count() as f64 / self.tissue.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    harmonics: [(f64, f64); 2],
    value: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let rho = u.hypot(v);
        if rho == 0.0 {
            return true;
        }
        let phi = v.atan2(u);
        let ellipse = 1.0 / ((phi.cos() / self.a).powi(2) + (phi.sin() / self.b).powi(2)).sqrt();
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &(eps, psi))| eps * ((i as f64 + 2.0) * phi + psi).cos())
            .sum();
        rho <= ellipse * (1.0 + wobble)
    }

    fn random(rng: &mut Rng, inside: &Blob) -> Self {
        let r = rng.range(0.0, 0.6);
        let t = rng.range(0.0, TAU);
        Self {
            cx: inside.cx + r * inside.a * t.cos(),
            cy: inside.cy + r * inside.b * t.sin(),
            a: rng.range(0.04, 0.14),
            b: rng.range(0.03, 0.10),
            angle: rng.range(0.0, TAU),
            harmonics: [
                (rng.range(-0.12, 0.12), rng.range(0.0, TAU)),
                (rng.range(-0.12, 0.12), rng.range(0.0, TAU)),
            ],
            value: rng.range(0.3, 1.0),
        }
    }

    fn jitter(&mut self, rng: &mut Rng) {
        self.cx += rng.range(-0.01, 0.01);
        self.cy += rng.range(-0.01, 0.01);
        self.a *= rng.range(0.95, 1.05);
        self.b *= rng.range(0.95, 1.05);
        self.angle += rng.range(-0.05, 0.05);
    }
}

/// Quadratic Bézier tube.
#[derive(Debug, Clone, PartialEq)]
struct Airway {
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
    half_width: f64,
    value: f64,
}

impl Airway {
    fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }

    fn contains(&self, x: f64, y: f64, samples: &[(f64, f64)]) -> bool {
        let _ = self;
        samples
            .iter()
            .any(|&(px, py)| (x - px).hypot(y - py) <= self.half_width)
    }
}

/// Random anatomy description; rendering is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    head: Blob,
    blobs: Vec<Blob>,
    airway: Airway,
    phase: [f64; 4],
}

impl PhantomSpec {
    pub fn random(rng: &mut Rng) -> Self {
        let head = Blob {
            cx: rng.range(-0.03, 0.03),
            cy: rng.range(-0.03, 0.03),
            a: rng.range(0.28, 0.36),
            b: rng.range(0.30, 0.37),
            angle: rng.range(-0.2, 0.2),
            harmonics: [
                (rng.range(-0.05, 0.05), rng.range(0.0, TAU)),
                (rng.range(-0.05, 0.05), rng.range(0.0, TAU)),
            ],
            value: rng.range(0.3, 0.7),
        };
        let extra = rng.int_range(2, 7);
        let blobs = (0..extra).map(|_| Blob::random(rng, &head)).collect();
        // Airway runs from the front of the head, bends, and descends.
        let p0 = (head.cx + rng.range(-0.25, -0.15), head.cy + rng.range(-0.12, 0.0));
        let p1 = (head.cx + rng.range(0.0, 0.12), head.cy + rng.range(-0.15, 0.0));
        let p2 = (head.cx + rng.range(0.05, 0.15), head.cy + rng.range(0.2, 0.3));
        let airway = Airway {
            p0,
            p1,
            p2,
            half_width: rng.range(0.02, 0.045),
            value: rng.range(0.0, 0.05),
        };
        let mut phase = [0.0; 4];
        phase.iter_mut().for_each(|c| *c = rng.range(-1.0, 1.0));
        Self {
            head,
            blobs,
            airway,
            phase,
        }
    }

    /// Small per-frame perturbation of the same anatomy.
    pub fn jittered(&self, rng: &mut Rng) -> Self {
        let mut s = self.clone();
        s.blobs.iter_mut().for_each(|b| b.jitter(rng));
        s.airway.p1.0 += rng.range(-0.03, 0.03);
        s.airway.p1.1 += rng.range(-0.03, 0.03);
        s.airway.p2.0 += rng.range(-0.02, 0.02);
        s.airway.half_width *= rng.range(0.8, 1.2);
        s.phase.iter_mut().for_each(|c| *c += rng.range(-0.1, 0.1));
        s
    }

    fn magnitude(&self, height: usize, width: usize) -> Vec<f64> {
        let path: Vec<(f64, f64)> = (0..=200).map(|i| self.airway.point(i as f64 / 200.0)).collect();
        let mut mag = vec![0.0; height * width];
        for r in 0..height {
            let y = (r as f64 + 0.5) / height as f64 - 0.5;
            for c in 0..width {
                let x = (c as f64 + 0.5) / width as f64 - 0.5;
                if !self.head.contains(x, y) {
                    continue;
                }
                let mut v = self.head.value;
                for b in &self.blobs {
                    if b.contains(x, y) {
                        v = b.value;
                    }
                }
                if self.airway.contains(x, y, &path) {
                    v = self.airway.value;
                }
                mag[r * width + c] = v;
            }
        }
        mag
    }

    fn phase_map(&self, height: usize, width: usize) -> Vec<f64> {
        let [c1, c2, c3, c4] = self.phase;
        let raw: Vec<f64> = (0..height * width)
            .map(|i| {
                let y = ((i / width) as f64 + 0.5) / height as f64 - 0.5;
                let x = ((i % width) as f64 + 0.5) / width as f64 - 0.5;
                c1 * x + c2 * y + c3 * x * y + c4 * (x * x - y * y)
            })
            .collect();
        let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { FRAC_PI_4 / peak } else { 0.0 };
        raw.into_iter().map(|v| v * scale).collect()
    }

    /// Renders image and masks, and draws the companion field map.
    pub fn render(&self, height: usize, width: usize, field_rng: &mut Rng) -> Phantom {
        let mag = self.magnitude(height, width);
        let tissue: Vec<bool> = mag.iter().map(|&v| v > TISSUE_THRESHOLD).collect();
        let boundary = boundary_mask(&tissue, height, width);
        let smooth = gaussian_blur(&mag, height, width, EDGE_SIGMA_PX);
        let phase = self.phase_map(height, width);
        let data = smooth
            .iter()
            .zip(&phase)
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect();
        let image = ComplexImage::from_vec(height, width, data).expect("finite phantom");
        let fieldmap = make_synthetic_field_map(
            height,
            width,
            field_rng,
            FieldMapStyle::BoundaryWeighted {
                boundary: &boundary,
            },
        );
        Phantom {
            image,
            tissue,
            boundary,
            fieldmap,
        }
    }
}

fn acceptable(p: &Phantom) -> bool {
    let fill = p.fill_fraction();
    (0.2..=0.8).contains(&fill) && p.boundary.iter().any(|&b| b)
}

/// Draws a phantom; fill fraction lies in `[0.2, 0.8]` and the boundary is nonempty.
pub fn make_phantom(height: usize, width: usize, rng: &mut Rng) -> Phantom {
    for _ in 0..MAX_ATTEMPTS {
        let spec = PhantomSpec::random(rng);
        let p = spec.render(height, width, rng);
        if acceptable(&p) {
            return p;
        }
    }
    panic!("no acceptable phantom for {height}×{width} after {MAX_ATTEMPTS} attempts");
}

/// Renders a jittered variant of `spec`, falling back to the unjittered anatomy.
pub fn make_variant(spec: &PhantomSpec, height: usize, width: usize, rng: &mut Rng) -> Phantom {
    for _ in 0..8 {
        let p = spec.jittered(rng).render(height, width, rng);
        if acceptable(&p) {
            return p;
        }
    }
    spec.render(height, width, rng)
}

/// Draws an anatomy whose rendering passes the phantom constraints.
pub fn random_spec(height: usize, width: usize, rng: &mut Rng) -> PhantomSpec {
    for _ in 0..MAX_ATTEMPTS {
        let spec = PhantomSpec::random(rng);
        let mut probe = Rng::new(0);
        if acceptable(&spec.render(height, width, &mut probe)) {
            return spec;
        }
    }
    panic!("no acceptable anatomy for {height}×{width}");
}

/// Pixels whose 4-neighbourhood (including the pixel) holds both tissue and air.
/// Outside the image counts as air.
pub fn boundary_mask(tissue: &[bool], height: usize, width: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < height
            && (c as usize) < width
            && tissue[r as usize * width + c as usize]
    };
    let mut out = vec![false; tissue.len()];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let n = [at(r, c), at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)];
            out[r as usize * width + c as usize] = n.iter().any(|&t| t) && n.iter().any(|&t| !t);
        }
    }
    out
}

/// Separable Gaussian blur with zero boundary, kernel radius `ceil(4σ)`.
pub fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.into_iter().map(|v| v / norm).collect();
    let pass = |src: &[f64], along_rows: bool| {
        let mut dst = vec![0.0; src.len()];
        for r in 0..height as isize {
            for c in 0..width as isize {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let d = i as isize - radius;
                    let (rr, cc) = if along_rows { (r, c + d) } else { (r + d, c) };
                    if rr >= 0 && cc >= 0 && rr < height as isize && cc < width as isize {
                        acc += kv * src[rr as usize * width + cc as usize];
                    }
                }
                dst[r as usize * width + c as usize] = acc;
            }
        }
        dst
    };
    pass(&pass(data, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = make_phantom(32, 32, &mut Rng::new(11));
        let b = make_phantom(32, 32, &mut Rng::new(11));
        assert_eq!(a, b);
    }

    #[test]
    fn masks_are_consistent() {
        for seed in 0..10 {
            let p = make_phantom(64, 64, &mut Rng::new(seed));
            let fill = p.fill_fraction();
            assert!((0.2..=0.8).contains(&fill), "fill {fill}");
            assert!(p.boundary.iter().any(|&b| b));
            // boundary ⊂ dilation(tissue) \ erosion(tissue)
            let dil: Vec<bool> = (0..p.tissue.len())
                .map(|i| p.tissue[i] || p.boundary[i])
                .collect();
            for i in 0..p.tissue.len() {
                if p.boundary[i] {
                    assert!(dil[i]);
                }
            }
        }
    }

    #[test]
    fn border_is_empty() {
        let p = make_phantom(64, 64, &mut Rng::new(5));
        let mag = p.image.magnitude();
        for c in 0..64 {
            assert!(mag[c] < 1e-6 && mag[63 * 64 + c] < 1e-6);
        }
    }

    #[test]
    fn phase_within_quarter_pi() {
        let p = make_phantom(32, 32, &mut Rng::new(2));
        for z in p.image.data() {
            if z.norm() > 1e-9 {
                assert!(z.arg().abs() <= FRAC_PI_4 + 1e-12);
            }
        }
    }

    #[test]
    fn boundary_of_single_pixel() {
        let mut t = vec![false; 9];
        t[4] = true;
        let b = boundary_mask(&t, 3, 3);
        assert_eq!(b, vec![false, true, false, true, true, true, false, true, false]);
    }
}
