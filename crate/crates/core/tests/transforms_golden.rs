use nullcurve::algebra::Mat2;
use nullcurve::grid::PolarGrid;
use nullcurve::transforms::{project_h3, sl2_field};
use nullcurve::Complex64;
use sha2::{Digest, Sha256};

const GOLDEN: &str = include_str!("golden/horosphere_h3_16x32.sha256");

fn horosphere_obj() -> String {
    // closed form for g ≡ 0, η ≡ 0.2
    let grid = PolarGrid::new(16, 32);
    let s = 0.2 / std::f64::consts::SQRT_2;
    let one = Complex64::new(1.0, 0.0);
    let vals = grid.points().into_iter().map(|z| Mat2::new(one, Complex64::new(0.0, 0.0), z * s, one)).collect();
    let mesh = project_h3(&sl2_field(grid, vals)).unwrap();
    mesh.validate().unwrap();
    mesh.to_obj()
}

#[test]
fn horosphere_mesh_matches_golden_hash() {
    let digest = Sha256::digest(horosphere_obj().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, GOLDEN.trim());
}

#[test]
fn horosphere_mesh_is_a_cap_through_the_origin() {
    let obj = horosphere_obj();
    let verts: Vec<[f64; 3]> = obj
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split(' ').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    assert_eq!(verts[0], [0.0, 0.0, 0.0]);
    // BB* has x3 = -|cz|²/4 ≤ 0: the cap bends to one side
    assert!(verts.iter().all(|v| v[2] <= 0.0));
}
