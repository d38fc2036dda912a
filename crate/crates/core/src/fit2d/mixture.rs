use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gaussian::FullGaussian;
use crate::oracle::{log_add_exp, Density};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

/// A bivariate Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
    gaussians: Vec<FullGaussian>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureRepr> for MixtureSpec {
    type Error = Error;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        Self::new(r.components)
    }
}

impl From<MixtureSpec> for MixtureRepr {
    fn from(m: MixtureSpec) -> Self {
        MixtureRepr {
            components: m.components,
        }
    }
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        let mut gaussians = Vec::with_capacity(components.len());
        for c in &components {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "mixture weight {} outside (0, 1]",
                    c.weight
                )));
            }
            total += c.weight;
            gaussians.push(FullGaussian::from_rows(
                c.mean.to_vec(),
                &[c.covariance[0].to_vec(), c.covariance[1].to_vec()],
            )?);
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components, gaussians })
    }

    /// Two modes at (±3, 0) with weights 0.7 and 0.3; covariances I and diag(1, 2).
    pub fn benchmark() -> Self {
        Self::new(vec![
            MixtureComponent {
                weight: 0.7,
                mean: [3.0, 0.0],
                covariance: [[1.0, 0.0], [0.0, 1.0]],
            },
            MixtureComponent {
                weight: 0.3,
                mean: [-3.0, 0.0],
                covariance: [[1.0, 0.0], [0.0, 2.0]],
            },
        ])
        .expect("benchmark mixture is valid")
    }

    pub fn single(g: &FullGaussian) -> Result<Self> {
        crate::gaussian::check_dim(2, g.dim())?;
        let s = g.covariance();
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: [g.mean()[0], g.mean()[1]],
            covariance: [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]],
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// The component with the largest weight.
    pub fn dominant_mode(&self) -> [f64; 2] {
        self.components
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .map(|c| c.mean)
            .expect("non-empty")
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for c in &self.components {
            m[0] += c.weight * c.mean[0];
            m[1] += c.weight * c.mean[1];
        }
        m
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(&self.gaussians)
            .map(|(c, g)| c.weight.ln() + g.log_pdf_unchecked(x))
            .fold(f64::NEG_INFINITY, log_add_exp)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.gaussians.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.gaussians[pick].draw_into(rng, out);
    }
}

impl Density for MixtureSpec {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf(x)
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = out.len();
        out.resize(start + 2 * count, 0.0);
        for row in out[start..].chunks_exact_mut(2) {
            self.draw(&mut rng, row);
        }
    }
}

/// `n` ancestral draws (component, then Gaussian) as rows of an `n × 2` matrix.
pub fn mixture_sample(spec: &MixtureSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let mut buf = Vec::with_capacity(2 * n);
    spec.sample_into(n, seed, &mut buf);
    Ok(DMatrix::from_row_slice(n, 2, &buf))
}
