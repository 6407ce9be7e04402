use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// One block of samples: useful data, private labels, side information,
/// releaser noise and optional utility labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBatch {
    /// Useful data, B × T × d_y.
    pub y: Tensor3,
    /// Private labels, B·T row-major.
    pub x: Vec<usize>,
    /// Size of the private alphabet.
    pub num_private: usize,
    /// Side information, B × 1 × d_s.
    pub s: Option<Tensor3>,
    /// Uniform noise in [0, 1], B × T × d_u (d_u may be zero).
    pub u: Tensor3,
    /// Utility class per sample.
    pub c: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl DatasetBatch {
    pub fn validate(&self) -> Result<()> {
        let (nb, nt, _) = self.y.shape();
        if nb == 0 || nt == 0 {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if self.x.len() != nb * nt {
            return Err(Error::Shape(format!(
                "{} private labels for {nb}x{nt} samples",
                self.x.len()
            )));
        }
        if self.num_private < 2 || self.x.iter().any(|&x| x >= self.num_private) {
            return Err(Error::Shape(format!(
                "private labels outside alphabet of size {}",
                self.num_private
            )));
        }
        if let Some(s) = &self.s {
            if s.batch() != nb || s.steps() != 1 {
                return Err(Error::Shape("side information must be B x 1 x d_s".into()));
            }
        }
        if self.u.batch() != nb || self.u.steps() != nt {
            return Err(Error::Shape("noise must be B x T x d_u".into()));
        }
        if self.u.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("noise entries must lie in [0, 1]".into()));
        }
        if let Some(c) = &self.c {
            if c.len() != nb || c.iter().any(|&v| v >= self.num_classes) {
                return Err(Error::Shape(
                    "utility labels must be one per sample and within range".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.y.steps()
    }

    pub fn si_dim(&self) -> usize {
        self.s.as_ref().map_or(0, Tensor3::features)
    }

    /// Subset of samples in the given order.
    pub fn select(&self, indices: &[usize]) -> DatasetBatch {
        let nt = self.steps();
        DatasetBatch {
            y: self.y.select(indices),
            x: indices
                .iter()
                .flat_map(|&b| self.x[b * nt..(b + 1) * nt].iter().copied())
                .collect(),
            num_private: self.num_private,
            s: self.s.as_ref().map(|s| s.select(indices)),
            u: self.u.select(indices),
            c: self
                .c
                .as_ref()
                .map(|c| indices.iter().map(|&b| c[b]).collect()),
            num_classes: self.num_classes,
        }
    }

    /// First `round(fraction·B)` samples versus the rest.
    pub fn split(&self, fraction: f64) -> Result<(DatasetBatch, DatasetBatch)> {
        let n = self.len();
        let cut = (fraction * n as f64).round() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::Config(format!(
                "split fraction {fraction} leaves an empty part of {n} samples"
            )));
        }
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..n).collect();
        Ok((self.select(&head), self.select(&tail)))
    }

    /// The same data without side information.
    pub fn without_si(&self) -> DatasetBatch {
        DatasetBatch {
            s: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    LabeledClusters,
    MarkovLoad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub num_classes: usize,
    /// Distance between the two private-bit cluster centres.
    pub separation: f64,
    /// Scale of the class centres.
    pub class_spread: f64,
    /// `P(X = 1 | C)` is `0.5 ± private_bias` for odd and even classes.
    pub private_bias: f64,
    pub noise_std: f64,
    /// Coordinate `j < num_classes` is scaled by `scale_growth^j`.
    pub scale_growth: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            num_classes: 3,
            separation: 4.0,
            class_spread: 2.0,
            private_bias: 0.0,
            noise_std: 1.0,
            scale_growth: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovParams {
    /// P(X_t = 1 | X_{t−1} = 0).
    pub p01: f64,
    /// P(X_t = 0 | X_{t−1} = 1).
    pub p10: f64,
    pub base_load: f64,
    /// Relative amplitude of the daily cycle of the base load.
    pub daily_amplitude: f64,
    pub occupancy_bump: f64,
    pub noise_std: f64,
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            p01: 0.1,
            p10: 0.1,
            base_load: 1.0,
            daily_amplitude: 0.3,
            occupancy_bump: 1.0,
            noise_std: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub generator: GeneratorKind,
    pub samples: usize,
    pub steps: usize,
    pub dim: usize,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    /// Probability that S reveals the private summary instead of a coin flip.
    #[serde(default)]
    pub si_correlation: f64,
    pub seed: u64,
    #[serde(default)]
    pub clusters: ClusterParams,
    #[serde(default)]
    pub markov: MarkovParams,
}

fn default_noise_dim() -> usize {
    1
}

/// Side information is a one-hot pair.
pub const SI_DIM: usize = 2;

impl SynthConfig {
    pub fn labeled_clusters(samples: usize, dim: usize, seed: u64) -> Self {
        Self {
            generator: GeneratorKind::LabeledClusters,
            samples,
            steps: 1,
            dim,
            noise_dim: 1,
            si_correlation: 0.0,
            seed,
            clusters: ClusterParams::default(),
            markov: MarkovParams::default(),
        }
    }

    pub fn markov_load(samples: usize, steps: usize, seed: u64) -> Self {
        Self {
            generator: GeneratorKind::MarkovLoad,
            samples,
            steps,
            dim: 1,
            noise_dim: 1,
            si_correlation: 0.0,
            seed,
            clusters: ClusterParams::default(),
            markov: MarkovParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.steps == 0 || self.dim == 0 {
            return Err(Error::Config("samples, steps and dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.si_correlation) {
            return Err(Error::Config(format!(
                "si_correlation {} outside [0, 1]",
                self.si_correlation
            )));
        }
        match self.generator {
            GeneratorKind::LabeledClusters => {
                let c = &self.clusters;
                if c.num_classes == 0 {
                    return Err(Error::Config("num_classes must be >= 1".into()));
                }
                if !(c.noise_std > 0.0 && c.noise_std.is_finite()) {
                    return Err(Error::Config(format!(
                        "degenerate covariance: noise_std = {}",
                        c.noise_std
                    )));
                }
                if !(c.separation >= 0.0 && c.separation.is_finite() && c.class_spread.is_finite())
                {
                    return Err(Error::Config("separation must be finite and >= 0".into()));
                }
                if !(c.scale_growth > 0.0 && c.scale_growth.is_finite()) {
                    return Err(Error::Config(format!(
                        "scale_growth must be > 0, got {}",
                        c.scale_growth
                    )));
                }
                if !(0.0..=0.5).contains(&c.private_bias) {
                    return Err(Error::Config(format!(
                        "private_bias {} outside [0, 0.5]",
                        c.private_bias
                    )));
                }
            }
            GeneratorKind::MarkovLoad => {
                let m = &self.markov;
                for (name, p) in [("p01", m.p01), ("p10", m.p10)] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "invalid transition matrix: {name} = {p}"
                        )));
                    }
                }
                if m.p01 + m.p10 == 0.0 {
                    return Err(Error::Config(
                        "invalid transition matrix: chain has no unique stationary law".into(),
                    ));
                }
                if !(m.noise_std >= 0.0 && m.noise_std.is_finite()) {
                    return Err(Error::Config("noise_std must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<DatasetBatch> {
        match self.generator {
            GeneratorKind::LabeledClusters => gen_labeled_clusters(self),
            GeneratorKind::MarkovLoad => gen_markov_load(self),
        }
    }
}

/// One-hot SI: the private summary with probability ρ, else a fair coin.
/// Both uniforms are always drawn so that datasets for different ρ share
/// every other random number.
fn side_information<R: Rng>(rng: &mut R, summary: usize, rho: f64) -> [f64; SI_DIM] {
    let reveal = rng.random::<f64>() < rho;
    let coin = rng.random::<bool>() as usize;
    let v = if reveal { summary } else { coin };
    let mut out = [0.0; SI_DIM];
    out[v] = 1.0;
    out
}

fn fill_noise<R: Rng>(rng: &mut R, u: &mut Tensor3) {
    u.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random::<f64>());
}

/// Static clusters. Class C is uniform, the private bit X has a
/// class-dependent bias, and coordinate `j` of Y is
///
/// `g_j · (μ_C[j] + [j = C mod d] · (sep/2)(2X − 1) + σ n_j)`
///
/// with class centres `μ_c[j] = spread · cos(2πc/K + j)` and scales
/// `g_j = growth^j` for `j < K` (1 beyond). Each class leaks X through its
/// own coordinate, and the growing scales make hiding one class cost more
/// than hiding the previous one.
pub fn gen_labeled_clusters(cfg: &SynthConfig) -> Result<DatasetBatch> {
    cfg.validate()?;
    if cfg.generator != GeneratorKind::LabeledClusters {
        return Err(Error::Config(
            "config is not for the labeled_clusters generator".into(),
        ));
    }
    let p = &cfg.clusters;
    let (nb, nt, nd) = (cfg.samples, cfg.steps, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = Tensor3::zeros(nb, nt, nd);
    let mut x = Vec::with_capacity(nb * nt);
    let mut s = Tensor3::zeros(nb, 1, SI_DIM);
    let mut c = Vec::with_capacity(nb);
    let k = p.num_classes as f64;
    let scales: Vec<f64> = (0..nd)
        .map(|j| {
            if j < p.num_classes {
                p.scale_growth.powi(j as i32)
            } else {
                1.0
            }
        })
        .collect();
    for b in 0..nb {
        let class = rng.random_range(0..p.num_classes);
        let bias = if class % 2 == 1 {
            p.private_bias
        } else {
            -p.private_bias
        };
        let bit = (rng.random::<f64>() < 0.5 + bias) as usize;
        for t in 0..nt {
            for (j, g) in scales.iter().enumerate() {
                let mut centre =
                    p.class_spread * (std::f64::consts::TAU * class as f64 / k + j as f64).cos();
                if j == class % nd {
                    centre += p.separation / 2.0 * (2.0 * bit as f64 - 1.0);
                }
                let z: f64 = rng.sample(StandardNormal);
                y.set(b, t, j, g * (centre + p.noise_std * z));
            }
            x.push(bit);
        }
        s.row_mut(b, 0)
            .copy_from_slice(&side_information(&mut rng, bit, cfg.si_correlation));
        c.push(class);
    }
    let mut u = Tensor3::zeros(nb, nt, cfg.noise_dim);
    fill_noise(&mut rng, &mut u);
    let out = DatasetBatch {
        y,
        x,
        num_private: 2,
        s: Some(s),
        u,
        c: Some(c),
        num_classes: p.num_classes,
    };
    out.validate()?;
    Ok(out)
}

/// Two-state occupancy chain started from its stationary law, driving
/// `Y_t = base·(1 + a·sin(2πt/24)) + bump·X_t + N(0, σ²)` in every coordinate.
/// S is a one-hot of the majority occupancy of the sequence.
pub fn gen_markov_load(cfg: &SynthConfig) -> Result<DatasetBatch> {
    cfg.validate()?;
    if cfg.generator != GeneratorKind::MarkovLoad {
        return Err(Error::Config(
            "config is not for the markov_load generator".into(),
        ));
    }
    let m = &cfg.markov;
    let (nb, nt, nd) = (cfg.samples, cfg.steps, cfg.dim);
    let stationary_one = m.p01 / (m.p01 + m.p10);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = Tensor3::zeros(nb, nt, nd);
    let mut x = Vec::with_capacity(nb * nt);
    let mut s = Tensor3::zeros(nb, 1, SI_DIM);
    for b in 0..nb {
        let mut state = (rng.random::<f64>() < stationary_one) as usize;
        let mut ones = 0;
        for t in 0..nt {
            if t > 0 {
                let flip = if state == 0 { m.p01 } else { m.p10 };
                if rng.random::<f64>() < flip {
                    state = 1 - state;
                }
            }
            ones += state;
            x.push(state);
            let base = m.base_load
                * (1.0 + m.daily_amplitude * (std::f64::consts::TAU * t as f64 / 24.0).sin());
            for j in 0..nd {
                let z: f64 = rng.sample(StandardNormal);
                y.set(
                    b,
                    t,
                    j,
                    base + m.occupancy_bump * state as f64 + m.noise_std * z,
                );
            }
        }
        let majority = match (2 * ones).cmp(&nt) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => x[b * nt],
        };
        s.row_mut(b, 0)
            .copy_from_slice(&side_information(&mut rng, majority, cfg.si_correlation));
    }
    let mut u = Tensor3::zeros(nb, nt, cfg.noise_dim);
    fill_noise(&mut rng, &mut u);
    let out = DatasetBatch {
        y,
        x,
        num_private: 2,
        s: Some(s),
        u,
        c: None,
        num_classes: 0,
    };
    out.validate()?;
    Ok(out)
}

/// Index of the hot SI coordinate of sample `b`.
pub fn si_symbol(s: &Tensor3, b: usize) -> usize {
    let row = s.row(b, 0);
    (0..row.len())
        .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let cfg = SynthConfig::labeled_clusters(50, 3, 7);
        assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
        let cfg = SynthConfig::markov_load(20, 24, 7);
        assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
        let other = SynthConfig {
            seed: 8,
            ..cfg.clone()
        };
        assert_ne!(cfg.generate().unwrap().y, other.generate().unwrap().y);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::labeled_clusters(10, 2, 0);
        cfg.clusters.noise_std = 0.0;
        assert!(cfg.generate().is_err());
        let mut cfg = SynthConfig::markov_load(10, 24, 0);
        cfg.markov.p01 = 1.5;
        assert!(cfg.generate().is_err());
        cfg.markov.p01 = 0.0;
        cfg.markov.p10 = 0.0;
        assert!(cfg.generate().is_err());
        let mut cfg = SynthConfig::markov_load(10, 24, 0);
        cfg.si_correlation = -0.1;
        assert!(cfg.generate().is_err());
    }

    #[test]
    fn markov_transitions_match_config() {
        let mut cfg = SynthConfig::markov_load(5000, 24, 3);
        cfg.markov.p01 = 0.2;
        cfg.markov.p10 = 0.05;
        let d = cfg.generate().unwrap();
        let mut counts = [[0usize; 2]; 2];
        for b in 0..d.len() {
            for t in 1..24 {
                counts[d.x[b * 24 + t - 1]][d.x[b * 24 + t]] += 1;
            }
        }
        let f01 = counts[0][1] as f64 / (counts[0][0] + counts[0][1]) as f64;
        let f10 = counts[1][0] as f64 / (counts[1][0] + counts[1][1]) as f64;
        assert!((f01 - 0.2).abs() < 0.02, "{f01}");
        assert!((f10 - 0.05).abs() < 0.02, "{f10}");
    }

    #[test]
    fn zero_bump_gives_label_free_load() {
        let mut cfg = SynthConfig::markov_load(4, 24, 1);
        cfg.markov.occupancy_bump = 0.0;
        cfg.markov.noise_std = 0.0;
        let d = cfg.generate().unwrap();
        for b in 0..4 {
            assert_eq!(d.y.sequence(b), d.y.sequence(0));
        }
    }

    #[test]
    fn full_correlation_si_reveals_majority() {
        let mut cfg = SynthConfig::markov_load(200, 24, 5);
        cfg.si_correlation = 1.0;
        let d = cfg.generate().unwrap();
        let s = d.s.as_ref().unwrap();
        for b in 0..d.len() {
            let ones: usize = d.x[b * 24..(b + 1) * 24].iter().sum();
            if ones != 12 {
                assert_eq!(si_symbol(s, b), (ones > 12) as usize);
            }
        }
    }

    #[test]
    fn split_and_select_keep_fields_aligned() {
        let d = SynthConfig::markov_load(10, 4, 2).generate().unwrap();
        let (train, test) = d.split(0.8).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(test.x, d.x[32..].to_vec());
        assert_eq!(test.y.sequence(1), d.y.sequence(9));
        assert!(d.split(0.0).is_err());
        assert!(train.validate().is_ok() && test.validate().is_ok());
    }
}
