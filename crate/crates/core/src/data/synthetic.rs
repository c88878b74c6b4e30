//! Three-covariate synthetic benchmark with action-dependent mechanisms.
//!
//! Each environment draws `X0`, `X1` from Gaussians, then `X2` from an
//! action-specific linear mechanism with `N(1, 0.01)` noise, and the reward
//! `Y = c * X2 + 0.1 * X1 + 0.2 * X0 + U(0, 0.1)`. The logging policy is
//! uniform over three actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{BanditDataset, Column, ColumnKind};

pub const NUM_ACTIONS: usize = 3;
const X2_NOISE_MEAN: f64 = 1.0;
const X2_NOISE_STD: f64 = 0.01;
const Y_ON_X1: f64 = 0.1;
const Y_ON_X0: f64 = 0.2;
const Y_NOISE_MAX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Parameters of one synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub label: String,
    /// `(mean, std)` of `X0`.
    pub x0: (f64, f64),
    /// `(mean, std)` of `X1`.
    pub x1: (f64, f64),
    /// Per action, the coefficients of `X0` and `X1` in the `X2` mechanism.
    pub x2: [[f64; 2]; NUM_ACTIONS],
    /// Coefficient of `X2` in the reward.
    pub y_x2: f64,
}

/// Contexts with the reward every action would have produced under shared noise.
#[derive(Debug, Clone)]
pub struct PotentialOutcomes {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<[f64; NUM_ACTIONS]>,
    pub y: Vec<[f64; NUM_ACTIONS]>,
}

impl PotentialOutcomes {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    /// Mean of `sum_a probs(x)[a] * Y(a)` over the stored contexts; `probs` receives `[X0, X1]`.
    pub fn policy_value(&self, mut probs: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
        let total: f64 = (0..self.len())
            .map(|i| {
                let p = probs(&[self.x0[i], self.x1[i]]);
                p.iter().zip(&self.y[i]).map(|(pa, ya)| pa * ya).sum::<f64>()
            })
            .sum();
        total / self.len() as f64
    }
}

impl SyntheticEnv {
    pub fn x2_mean(&self, action: usize, x0: f64, x1: f64) -> f64 {
        let [b0, b1] = self.x2[action];
        b0 * x0 + b1 * x1 + X2_NOISE_MEAN
    }

    pub fn reward_mean(&self, x0: f64, x1: f64, x2: f64) -> f64 {
        self.y_x2 * x2 + Y_ON_X1 * x1 + Y_ON_X0 * x0 + 0.5 * Y_NOISE_MAX
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
        let x0 = Normal::new(self.x0.0, self.x0.1).expect("valid std").sample(rng);
        let x1 = Normal::new(self.x1.0, self.x1.1).expect("valid std").sample(rng);
        let e2 = Normal::new(0.0, X2_NOISE_STD).expect("valid std").sample(rng);
        let u = Uniform::new(0.0, Y_NOISE_MAX).expect("valid range").sample(rng);
        (x0, x1, e2, u)
    }

    fn outcome(&self, a: usize, x0: f64, x1: f64, e2: f64, u: f64) -> (f64, f64) {
        let x2 = self.x2_mean(a, x0, x1) + e2;
        let y = self.y_x2 * x2 + Y_ON_X1 * x1 + Y_ON_X0 * x0 + u;
        (x2, y)
    }

    /// Logged rows under the uniform logging policy.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> BanditDataset {
        let mut ds = empty_dataset(&self.label);
        for _ in 0..n {
            let (x0, x1, e2, u) = self.draw(rng);
            let a = rng.random_range(0..NUM_ACTIONS);
            let (x2, y) = self.outcome(a, x0, x1, e2, u);
            ds.push_row(&[x0, x1, x2], a, y);
        }
        ds
    }

    /// Contexts with all actions' outcomes, sharing the noise draw across actions.
    pub fn potential_outcomes(&self, n: usize, rng: &mut ChaCha8Rng) -> PotentialOutcomes {
        let mut po = PotentialOutcomes { x0: Vec::new(), x1: Vec::new(), x2: Vec::new(), y: Vec::new() };
        for _ in 0..n {
            let (x0, x1, e2, u) = self.draw(rng);
            let mut x2s = [0.0; NUM_ACTIONS];
            let mut ys = [0.0; NUM_ACTIONS];
            for a in 0..NUM_ACTIONS {
                (x2s[a], ys[a]) = self.outcome(a, x0, x1, e2, u);
            }
            po.x0.push(x0);
            po.x1.push(x1);
            po.x2.push(x2s);
            po.y.push(ys);
        }
        po
    }
}

fn empty_dataset(label: &str) -> BanditDataset {
    let cols = vec![
        Column::new("X0", ColumnKind::Continuous),
        Column::new("X1", ColumnKind::Continuous),
        Column::new("X2", ColumnKind::Continuous),
    ];
    BanditDataset::new(label, cols, "Y", NUM_ACTIONS, vec![1.0 / NUM_ACTIONS as f64; NUM_ACTIONS])
}

/// The three environments of a split.
pub fn environments(split: Split) -> Vec<SyntheticEnv> {
    let env = |label: &str, x0, x2, y_x2| SyntheticEnv { label: label.into(), x0, x1: (5.0, 0.5), x2, y_x2 };
    match split {
        Split::Train => vec![
            env("train1", (5.0, 1.0), [[3.0, 5.0], [5.0, 4.0], [5.0, 5.0]], 5.0),
            env("train2", (6.0, 0.5), [[3.0, 2.0], [2.0, 4.0], [2.0, 2.0]], 6.0),
            env("train3", (5.0, 0.5), [[3.0, 10.0], [5.0, 4.0], [4.0, 4.0]], 5.0),
        ],
        Split::Test => vec![
            env("test1", (5.0, 1.0), [[3.0, 2.0], [2.0, 4.0], [2.0, 2.0]], 5.0),
            env("test2", (6.0, 0.5), [[3.0, 8.0], [5.0, 4.0], [2.0, 5.0]], 6.0),
            env("test3", (5.0, 0.5), [[3.0, 6.0], [5.0, 4.0], [5.0, 5.0]], 6.0),
        ],
    }
}

/// Independent, reproducible stream for environment `index` of `split`.
pub fn env_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = match split {
        Split::Train => 0,
        Split::Test => 1 << 16,
    };
    rng.set_stream(base + index as u64);
    rng
}

/// Samples `n_per_env` logged rows from each environment of `split`.
pub fn generate_synthetic(n_per_env: usize, split: Split, seed: u64) -> Vec<BanditDataset> {
    environments(split).iter().enumerate().map(|(i, e)| e.sample(n_per_env, &mut env_rng(seed, split, i))).collect()
}

/// Potential outcomes for every test environment, from streams disjoint from [`generate_synthetic`].
pub fn test_potential_outcomes(n_per_env: usize, seed: u64) -> Vec<PotentialOutcomes> {
    environments(Split::Test)
        .iter()
        .enumerate()
        .map(|(i, e)| e.potential_outcomes(n_per_env, &mut env_rng(seed, Split::Test, 100 + i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn first_branch_mean_matches_mechanism() {
        let ds = &generate_synthetic(30_000, Split::Train, 1)[0];
        let x2: Vec<f64> = (0..ds.len()).filter(|&i| ds.actions[i] == 0).map(|i| ds.values[2][i]).collect();
        let (m, sd) = mean_sd(&x2);
        // 3 * 5 + 5 * 5 + 1
        assert!((m - 41.0).abs() < 3.0 * sd / (x2.len() as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn second_environment_context_moments() {
        let ds = &generate_synthetic(20_000, Split::Train, 2)[1];
        let (m, sd) = mean_sd(&ds.values[0]);
        let n = ds.len() as f64;
        assert!((m - 6.0).abs() < 3.0 * 0.5 / n.sqrt(), "mean {m}");
        // Standard error of the sample std is about sd / sqrt(2n).
        assert!((sd - 0.5).abs() < 3.0 * 0.5 / (2.0 * n).sqrt(), "sd {sd}");
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let a = generate_synthetic(500, Split::Test, 42);
        let b = generate_synthetic(500, Split::Test, 42);
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(500, Split::Test, 43));
    }

    #[test]
    fn logging_policy_is_uniform() {
        let ds = &generate_synthetic(9_000, Split::Train, 3)[2];
        for a in 0..NUM_ACTIONS {
            let share = ds.actions.iter().filter(|&&x| x == a).count() as f64 / ds.len() as f64;
            assert!((share - 1.0 / 3.0).abs() < 0.03);
        }
        assert_eq!(ds.logging_policy, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn test_mechanisms_stay_inside_training_envelope() {
        let train = environments(Split::Train);
        let test = environments(Split::Test);
        let within = |v: f64, get: &dyn Fn(&SyntheticEnv) -> f64| {
            let lo = train.iter().map(get).fold(f64::INFINITY, f64::min);
            let hi = train.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
            lo <= v && v <= hi
        };
        for t in &test {
            for a in 0..NUM_ACTIONS {
                for k in 0..2 {
                    assert!(within(t.x2[a][k], &|e| e.x2[a][k]), "{} a{a} k{k}", t.label);
                }
            }
            assert!(within(t.y_x2, &|e| e.y_x2));
            assert!(within(t.x0.0, &|e| e.x0.0) && within(t.x0.1, &|e| e.x0.1));
            assert!(within(t.x1.0, &|e| e.x1.0) && within(t.x1.1, &|e| e.x1.1));
        }
    }

    #[test]
    fn potential_outcomes_share_noise() {
        let env = &environments(Split::Test)[0];
        let po = env.potential_outcomes(50, &mut env_rng(9, Split::Test, 0));
        for i in 0..po.len() {
            let e0 = po.x2[i][0] - env.x2_mean(0, po.x0[i], po.x1[i]);
            let e1 = po.x2[i][1] - env.x2_mean(1, po.x0[i], po.x1[i]);
            assert!((e0 - e1).abs() < 1e-9);
        }
        let uniform = po.policy_value(|_| vec![1.0 / 3.0; 3]);
        let mean_all: f64 = po.y.iter().map(|y| y.iter().sum::<f64>() / 3.0).sum::<f64>() / po.len() as f64;
        assert!((uniform - mean_all).abs() < 1e-9);
    }
}
