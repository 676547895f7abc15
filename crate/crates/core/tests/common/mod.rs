use optieq::bench::BenchConfig;
use optieq::config::ExperimentConfig;
use optieq::models::ConvLayerSpec;
use optieq::train::TrainMode;

/// Two short spans at 4 samples per symbol with small models, so that every
/// stage runs in seconds.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.link.fiber.spans = 2;
    c.link.shaping.oversampling = 4;
    c.dataset.train_symbols = 1024;
    c.dataset.test_symbols = 1024;
    c.dataset.launch_powers_dbm = vec![-1.0, 2.0];
    c.models.teacher.bilstm_hidden = 6;
    c.models.student.hidden_layers = vec![ConvLayerSpec::new(4, 5, 1), ConvLayerSpec::new(4, 5, 2)];
    for mode in TrainMode::ALL {
        let t = match mode {
            TrainMode::Teacher => &mut c.training.teacher,
            TrainMode::StudentKd => &mut c.training.student_kd,
            TrainMode::StudentScratch => &mut c.training.student_scratch,
            TrainMode::StudentL2 => &mut c.training.student_l2,
        };
        t.epochs = 2;
        t.batch_size = 2;
    }
    c.bench = BenchConfig {
        warmup_iters: 1,
        measured_iters: 10,
        thread_counts: vec![1, 2],
        batch_windows: 2,
        ..BenchConfig::default()
    };
    c
}
