use linet::experiment::{run_variant, ExperimentConfig, Variant};
use linet::synthetic::{ettm2_like, write_csv};

fn main() {
    let dir = std::env::temp_dir().join("linet_desk_probe");
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("ettm2_like.csv");
    write_csv(&ettm2_like(6000, 42), &csv).unwrap();

    for (variant, stride) in [(Variant::Full, 2), (Variant::Mlp3, 2)] {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = csv.clone();
        cfg.variant = variant;
        cfg.stride = stride;
        cfg.max_train_windows = Some(5000);
        cfg.train.seed = 7;
        cfg.out_dir = dir.clone();
        let started = std::time::Instant::now();
        let out = run_variant::<f32>(&cfg).unwrap();
        println!(
            "{}: test MAE {:.4} MSE {:.4} | persistence MAE {:.4} MSE {:.4} | {} epochs, train {:.1}s eval {:.1}s total {:.1}s",
            out.report.variant,
            out.report.mae,
            out.report.mse,
            out.persistence.0,
            out.persistence.1,
            out.history.len(),
            out.report.train_seconds,
            out.report.test_seconds,
            started.elapsed().as_secs_f64()
        );
    }
}
