use std::fs;

use jenn_core::dataset::{
    generate_sensitivity_set, generate_trajectory, load_dataset, load_sensitivity, load_trajectory, save_dataset,
    Dataset, PerturbationMode,
};
use jenn_core::lorenz96::{self, Lorenz96Config};
use jenn_core::state::dot;
use jenn_core::Error;

#[test]
fn default_trajectory_is_regenerable_and_on_the_attractor() {
    let cfg = Lorenz96Config::default();
    let traj = generate_trajectory(&cfg, 1000.0, 1000.0, 0).unwrap();
    assert_eq!(traj.len(), 80_000);
    assert_eq!(traj.sample_steps, 80_000);
    for (x, y) in traj.pairs.iter().step_by(997) {
        assert_eq!(lorenz96::step_rk4(&cfg, x).unwrap(), *y);
    }
    for w in traj.pairs.windows(2).step_by(1009) {
        assert_eq!(w[0].1, w[1].0);
    }
    let means = traj.component_means();
    assert!(means.iter().all(|m| (1.5..=3.5).contains(m)), "{means:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.l96");
    save_dataset(&path, &Dataset::from(traj.clone())).unwrap();
    assert_eq!(load_trajectory(&path).unwrap(), traj);
    let again = generate_trajectory(&cfg, 1000.0, 1000.0, 0).unwrap();
    assert_eq!(again, traj);
}

#[test]
fn sensitivity_labels_satisfy_the_adjoint_identity() {
    let cfg = Lorenz96Config::new(12, 8.0, 0.0125).unwrap();
    let traj = generate_trajectory(&cfg, 20.0, 5.0, 3).unwrap();
    for mode in [PerturbationMode::DenseProportional, PerturbationMode::SparseSite] {
        let sens = generate_sensitivity_set(&traj, 50, mode, 0.01, 4).unwrap();
        for r in &sens.records {
            let mdx = lorenz96::step_tlm(&cfg, &r.x, &r.dx).unwrap();
            assert_eq!(mdx, r.dy_true);
            let lhs = dot(&r.dy_true, &r.yhat);
            let rhs = dot(&r.dx, &r.xhat_true);
            assert!((lhs - rhs).abs() <= 1e-12 * (dot(&r.dy_true, &r.dy_true) * dot(&r.yhat, &r.yhat)).sqrt());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.l96");
        save_dataset(&path, &Dataset::from(sens.clone())).unwrap();
        assert_eq!(load_sensitivity(&path).unwrap(), sens);
        assert!(matches!(load_dataset(&path).unwrap(), Dataset::Sensitivity(_)));
    }
}

#[test]
fn damaged_files_are_rejected() {
    let cfg = Lorenz96Config::new(8, 8.0, 0.0125).unwrap();
    let traj = generate_trajectory(&cfg, 1.0, 1.0, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.l96");
    save_dataset(&path, &Dataset::from(traj)).unwrap();
    let good = fs::read(&path).unwrap();

    let mut flipped = good.clone();
    let k = flipped.len() / 2 + 5;
    flipped[k] ^= 0x10;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_trajectory(&path), Err(Error::Checksum { .. })));

    fs::write(&path, &good[..good.len() - 8]).unwrap();
    assert!(matches!(load_trajectory(&path), Err(Error::Format { .. })));

    let mut old = good.clone();
    old[8] = 99;
    fs::write(&path, &old).unwrap();
    assert!(matches!(load_trajectory(&path), Err(Error::Version { found: 99, .. })));

    fs::write(&path, &good).unwrap();
    assert!(matches!(load_sensitivity(&path), Err(Error::Format { .. })));
}
