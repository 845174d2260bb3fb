use bhm_core::accum::{Domain, SampleAccumulator};
use bhm_core::hierarchy::build;
use bhm_core::splinefit::{adaptive_fit, FitConfig};
use bhm_core::testbed::{builtin, sample};
use bhm_core::transforms::{MonotoneMap, Transform, TransformKind};

#[test]
#[ignore]
fn probe_a09_p02_cov2() {
    let d = builtin("divergent").unwrap();
    let t = Transform::new(TransformKind::Arctan, 0.2).unwrap();
    let (xlo, xhi) = d.domain();
    let domain = Domain::new(t.kind.y_of(xlo), t.kind.y_of(xhi)).unwrap();
    let mut acc = SampleAccumulator::new(domain, 8, None).unwrap();
    sample(&d, 100_000, 900, &mut acc, Some(&t)).unwrap();
    let h = build(&acc, 10).unwrap();
    let (model, _) = adaptive_fit(&h, &FitConfig::default(), &[]).unwrap();
    let y = 0.984616f64;
    let p = model.piece_of(y).unwrap();
    let cov = model.piece_cov(p);
    println!("piece {p} of {}", model.piece_coeffs.len());
    println!("cov diag: {:?}", (0..cov.nrows()).map(|i| cov[(i,i)]).collect::<Vec<_>>());
    println!("cov: {cov:.6e}");
    let (center, half) = model.local_frame(p);
    let u = (y - center) / half;
    println!("u = {u}");
    let n = cov.nrows();
    let mut r = 0.0; let mut scale = 0.0; let mut pw = 1.0;
    let mut phi = Vec::new();
    for _ in 0..n { phi.push(pw); pw *= u; }
    for i in 0..n { for j in 0..n {
        let term = cov[(i,j)]*phi[i]*phi[j];
        r += term; scale += term.abs();
    }}
    println!("r = {r:e}, scale = {scale:e}, ratio = {:e}", r/scale);
    // eigenvalues of the piece covariance
    let sym = nalgebra::SymmetricEigen::new(cov.clone());
    println!("eigs: {:?}", sym.eigenvalues.as_slice());
}
