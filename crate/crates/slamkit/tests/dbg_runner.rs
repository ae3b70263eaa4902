use slamkit::sim::dataset::{Dataset, DatasetMeta};
use slamkit::sim::runner::{run, Mode, RunnerConfig};
use slamkit::sim::trajectory::TrajectorySpec;

fn trace(seed: u64, mode: Mode) {
    let ds = Dataset::generate(DatasetMeta {
        seed,
        trajectory: TrajectorySpec::low(6.0),
        n_points: 400,
        ..DatasetMeta::default()
    })
    .unwrap();
    let mut cfg = RunnerConfig {
        mode,
        ..RunnerConfig::default()
    };
    cfg.data.rho0 = 0.33;
    cfg.data.sigma_rho0 = 0.3;
    match std::env::var("ABL").as_deref() {
        Ok("noconv") => cfg.linearity_threshold = 0.0,
        Ok("noransac") => cfg.data.ransac.max_iterations = 0,
        Ok("both") => {
            cfg.linearity_threshold = 0.0;
            cfg.data.ransac.max_iterations = 0;
        }
        _ => {}
    }
    let out = run(&ds, &cfg).unwrap();
    println!("=== seed {seed} mode {mode:?} ===");
    let counts: Vec<usize> = ds.labels.iter().map(|l| l.len()).collect();
    for (k, c) in counts.iter().enumerate() {
        if k % 30 == 0 {
            let s = ds.gt.camera_sample(k);
            println!(
                "  f{k:3} labels={c:3} pos=({:+.2},{:+.2},{:+.2}) fwd=({:+.2},{:+.2},{:+.2})",
                s.pose.t.x, s.pose.t.y, s.pose.t.z,
                s.pose.q.rotate(nalgebra::Vector3::x()).x,
                s.pose.q.rotate(nalgebra::Vector3::x()).y,
                s.pose.q.rotate(nalgebra::Vector3::x()).z,
            );
        }
    }
    println!(
        "rmse_pos={:.4} diverged={:?} final_landmarks={} skipped={}",
        out.metrics.rmse_pos, out.metrics.diverged_at, out.final_landmarks, out.metrics.skipped
    );
    for (i, r) in out.reports.iter().enumerate() {
        if i < 30 || i % 30 == 0 || r.tracked == 0 {
            let s = out.metrics.steps.iter().find(|s| s.frame == r.frame);
            let ratios: Vec<String> = s
                .map(|s| {
                    s.err
                        .iter()
                        .zip(&s.sigma)
                        .map(|(e, sg)| format!("{:+.1}", e / sg))
                        .collect()
                })
                .unwrap_or_default();
            println!(
                "f{:3} trk={:2} vis={:2} srch={:2} m={:2} strong={:2} corr={:2} gate={:2} new={} nees={:8.2} perr={:.4} e/s=[{}]",
                r.frame, r.tracked, r.visible, r.searched, r.matched, r.strong, r.corrected,
                r.gated, r.new_landmarks,
                s.map(|s| s.nees).unwrap_or(-1.0),
                s.map(|s| s.pos_err()).unwrap_or(-1.0),
                ratios.join(","),
            );
        }
    }
}

#[test]
fn diff_two_runs() {
    trace(11, Mode::Imu);
    trace(12, Mode::Cv);
}
