//! L1 plus gradient-difference loss (exponent 1).

use crate::tensors::RealTensor;

use super::NnError;

/// Sign with `sign(0) = 0`, used as the subgradient of `|·|`.
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub l1: f64,
    pub gdl: f64,
    pub total: f64,
    /// `∂total/∂pred`
    pub grad: RealTensor,
}

/// L1 is the mean absolute error over every element. GDL is the mean, over
/// all horizontal and vertical neighbour pairs of every channel, of
/// `| |Δtarget| − |Δpred| |`.
pub fn loss(pred: &RealTensor, target: &RealTensor) -> Result<LossValue, NnError> {
    if !pred.same_shape(target) {
        return Err(NnError::Shape {
            expected: format!("{:?}", target.dims()),
            got: pred.dims().to_vec(),
        });
    }
    let (h, w, c) = pred.hwc().map_err(|_| NnError::Shape {
        expected: "H×W×C".into(),
        got: pred.dims().to_vec(),
    })?;
    let (p, t) = (pred.data(), target.data());
    let n = p.len() as f64;
    let mut grad = vec![0.0; p.len()];
    let mut l1 = 0.0;
    for ((g, a), b) in grad.iter_mut().zip(p).zip(t) {
        l1 += (a - b).abs();
        *g = sgn(a - b) / n;
    }
    l1 /= n;

    let pairs = (h * (w - 1) + (h - 1) * w) * c;
    let mut gdl = 0.0;
    if pairs > 0 {
        let scale = 1.0 / pairs as f64;
        let mut pair = |i: usize, j: usize, grad: &mut [f64]| {
            let dp = p[j] - p[i];
            let dt = t[j] - t[i];
            let e = dt.abs() - dp.abs();
            gdl += e.abs();
            let g = -sgn(e) * sgn(dp) * scale;
            grad[j] += g;
            grad[i] -= g;
        };
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let i = (r * w + col) * c + ch;
                    if col + 1 < w {
                        pair(i, i + c, &mut grad);
                    }
                    if r + 1 < h {
                        pair(i, i + w * c, &mut grad);
                    }
                }
            }
        }
        gdl *= scale;
    }
    Ok(LossValue {
        l1,
        gdl,
        total: l1 + gdl,
        grad: RealTensor::from_vec(pred.dims(), grad).expect("shape"),
    })
}
