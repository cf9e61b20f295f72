use std::sync::Arc;

use num_complex::Complex64;
use spiral_agcnn::classical::{ir_deblur, mfi_deblur, plan_for_map, plan_mfi, ClassicalError};
use spiral_agcnn::datagen::make_phantom;
use spiral_agcnn::encoder::{Encoder, FieldMap, KspaceData, OffResonance};
use spiral_agcnn::quality::psnr;
use spiral_agcnn::spiral::{make_default_spiral, READOUTS_S};
use spiral_agcnn::tensors::{ComplexImage, Rng};

fn rel_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.data().iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn random_samples(len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = Rng::new(seed);
    (0..len).map(|_| Complex64::new(rng.normal(), rng.normal())).collect()
}

#[test]
fn constant_map_at_a_basis_frequency_is_one_demodulation() {
    let traj = Arc::new(make_default_spiral(16, 20.0, READOUTS_S[3], 4e-6).unwrap());
    let enc = Encoder::new(traj.clone(), 16, 16);
    let s = KspaceData::new(random_samples(traj.len(), 1), traj.clone()).unwrap();
    let plan = plan_mfi(&traj, -300.0, 300.0, 7, 1.0).unwrap();
    for &fl in plan.basis_freqs() {
        let field = FieldMap::constant(16, 16, fl);
        let out = mfi_deblur(&s, &field, &plan).unwrap();
        let want = enc.basis_image(&s, fl);
        let e = rel_err(&out, &want);
        assert!(e < 1e-6, "{fl} Hz: {e:e}");
    }
}

#[test]
fn fit_residual_does_not_grow_with_more_bases() {
    let traj = make_default_spiral(16, 20.0, READOUTS_S[3], 4e-6).unwrap();
    let residuals: Vec<f64> = (2..=16)
        .map(|l| plan_mfi(&traj, -400.0, 400.0, l, 1.0).unwrap().max_fit_residual())
        .collect();
    for w in residuals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{residuals:?}");
    }
    assert!(residuals.last().unwrap() < &1e-3, "{residuals:?}");
}

#[test]
fn mfi_converges_to_exact_conjugate_phase() {
    let n = 32;
    let traj = Arc::new(make_default_spiral(n, 20.0, READOUTS_S[3], 4e-6).unwrap());
    let enc = Encoder::new(traj.clone(), n, n);
    let ph = make_phantom(n, n, &mut Rng::new(1));
    let field = FieldMap::new(n, n, ph.fieldmap.data().iter().map(|v| 1.5 * v + 50.0).collect())
        .unwrap();
    let s = enc.forward(&ph.image, OffResonance::Map(&field)).unwrap();
    let plan = plan_for_map(&traj, &field).unwrap();
    let mfi = mfi_deblur(&s, &field, &plan).unwrap();
    let exact = enc.adjoint_raw(s.samples(), OffResonance::Map(&field), true);
    let exact = ComplexImage::from_vec(n, n, exact).unwrap();
    let e = rel_err(&mfi, &exact);
    assert!(e < 1e-2, "{e:e}");
}

#[test]
fn corrections_beat_the_blurred_reconstruction() {
    let n = 64;
    let traj = Arc::new(make_default_spiral(n, 20.0, READOUTS_S[3], 4e-6).unwrap());
    let enc = Encoder::new(traj.clone(), n, n);
    let ph = make_phantom(n, n, &mut Rng::new(1));
    let field = FieldMap::new(n, n, ph.fieldmap.data().iter().map(|v| 1.5 * v + 50.0).collect())
        .unwrap();
    let s = enc.forward(&ph.image, OffResonance::Map(&field)).unwrap();
    let blurred = enc.cg_recon(&s, None, 30, 1e-10).unwrap().image;
    let plan = plan_for_map(&traj, &field).unwrap();
    let mfi = mfi_deblur(&s, &field, &plan).unwrap();
    let ir = ir_deblur(&s, &field, 30, 1e-10).unwrap();
    let p = |img: &ComplexImage| psnr(&ph.image, img).unwrap().db;
    assert!(p(&ir.image) > p(&mfi), "ir {} mfi {}", p(&ir.image), p(&mfi));
    assert!(p(&mfi) > p(&blurred), "mfi {} blurred {}", p(&mfi), p(&blurred));
    assert!(ir.iterations <= 30 && ir.seconds > 0.0);
}

#[test]
fn plan_rejects_bad_arguments() {
    let traj = make_default_spiral(16, 20.0, READOUTS_S[0], 4e-6).unwrap();
    assert!(matches!(plan_mfi(&traj, 0.0, 10.0, 1, 1.0), Err(ClassicalError::TooFewBases(1))));
    assert!(matches!(
        plan_mfi(&traj, 10.0, 0.0, 3, 1.0),
        Err(ClassicalError::EmptyRange { .. })
    ));
    assert!(matches!(plan_mfi(&traj, 0.0, 10.0, 3, 0.0), Err(ClassicalError::BadStep(_))));
    let plan = plan_mfi(&traj, -10.0, 10.0, 3, 1.0).unwrap();
    assert!(matches!(plan.coefficients(50.0), Err(ClassicalError::OutsidePlan { .. })));
}
