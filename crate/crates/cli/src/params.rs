//! Per-experiment parameters.
//!
//! Every field is optional so a config file and command-line flags can be
//! layered; flags win, then the file, then the built-in default.

macro_rules! params {
    ($name:ident { $( $(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)? }) => {
        #[derive(Debug, Clone, Default, clap::Args, serde::Deserialize)]
        #[serde(deny_unknown_fields, rename_all = "kebab-case")]
        #[command(allow_negative_numbers = true)]
        pub struct $name {
            $( $(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            pub fn overlay(self, file: Self) -> Self {
                Self { $( $field: self.$field.or(file.$field), )* }
            }

            $(
                pub fn $field(&self) -> $ty {
                    self.$field.clone().unwrap_or_else(|| $default)
                }
            )*

            /// Resolved values keyed by their config-file names.
            pub fn to_json(&self) -> serde_json::Value {
                let mut map = serde_json::Map::new();
                $( map.insert(stringify!($field).replace('_', "-"), serde_json::json!(self.$field())); )*
                serde_json::Value::Object(map)
            }
        }
    };
}

params!(Prop2Params {
    sigma: f64 = 1.0,
    dim: usize = 3,
    trials: usize = 1000,
});

params!(Lemma8Params {
    atoms: usize = 16,
    eps: f64 = 1e-2,
    /// Defaults to `eps / 10`.
    delta: f64 = f64::NAN,
    trials: usize = 100,
});

params!(Thm3Params {
    n: usize = 4,
    eps: f64 = 1e-2,
    /// Defaults to `eps / 10`.
    delta: f64 = f64::NAN,
    trials: usize = 100,
});

params!(Thm4Params {
    n: usize = 4,
    d: usize = 2,
    /// Bandwidth; when absent it is chosen so the bound meets `target`.
    sigma: f64 = f64::NAN,
    target: f64 = 1e-3,
});

params!(Thm5Params {
    atoms: usize = 16,
    d: usize = 2,
    sigma: f64 = 0.5,
    #[arg(value_delimiter = ',')]
    m_sweep: Vec<usize> = vec![4, 16, 64, 256, 1024],
    trials: usize = 200,
});

params!(Thm6Params {
    n: usize = 82,
    d: usize = 2,
    restarts: usize = 20,
    steps: usize = 5000,
    batch_size: usize = 2048,
    eval_every: usize = 250,
    learning_rate: f64 = 0.02,
    sharpness: f64 = 400.0,
    #[arg(value_delimiter = ',')]
    tau_grid: Vec<f64> = vec![0.3, 1.0, 0.1, 3.0, 0.03],
});

params!(Thm7Params {
    n: usize = 8,
    d: usize = 2,
    eps: f64 = 0.1,
});

params!(TrainParams {
    n: usize = 4,
    mode: String = "kme".to_owned(),
    dim: usize = 3,
    m: usize = 2,
    steps: usize = 5000,
    learning_rate: f64 = 0.03,
    batch_size: usize = 32,
    full_batch: bool = true,
    optimizer: String = "adam".to_owned(),
    log_every: usize = 50,
    init_log_tau: f64 = 0.0,
});

params!(AblationParams {
    n: usize = 6,
    mode: String = "kme".to_owned(),
    dim: usize = 2,
    #[arg(value_delimiter = ',')]
    m_sweep: Vec<usize> = vec![1, 2, 4, 8],
    steps: usize = 3000,
    learning_rate: f64 = 0.03,
    batch_size: usize = 32,
    full_batch: bool = true,
    optimizer: String = "adam".to_owned(),
    log_every: usize = 100,
    init_log_tau: f64 = 0.0,
    tolerance: f64 = 0.02,
});

params!(RetrievalParams {
    n: usize = 4,
    mode: String = "kme".to_owned(),
    dim: usize = 3,
    m: usize = 2,
    steps: usize = 2000,
    learning_rate: f64 = 0.03,
    batch_size: usize = 32,
    full_batch: bool = true,
    optimizer: String = "adam".to_owned(),
    init_log_tau: f64 = 0.0,
    #[arg(value_delimiter = ',')]
    ks: Vec<usize> = vec![1, 3, 5],
});
