//! Synthetic confounder roster standing in for the usual imaging-study
//! covariates (age, head size, sex, site, scan date, QC, genetic PCs).

use dncit::data::standardize_columns;
use dncit::seed::{derive_seed, rng_from_seed};
use dncit::ColumnMeta;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{LogNormal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const SUPPORTED_DIMS: [usize; 6] = [1, 2, 4, 6, 10, 15];

/// Seed of the fixed mixing that correlates the continuous block.
const MIXING_SEED: u64 = 0x5EED_C0F0;
/// Largest absolute sub-diagonal mixing weight. Neighbouring columns then have
/// `|ρ| ≤ 0.4 / √1.16 ≈ 0.37`; all other pairs are uncorrelated.
const MAX_MIXING: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Age,
    HeadSize,
    Sex,
    Site,
    Date,
    Qc,
    GeneticPc(usize),
}

impl Role {
    pub fn name(self) -> String {
        match self {
            Role::Age => "age".into(),
            Role::HeadSize => "head_size".into(),
            Role::Sex => "sex".into(),
            Role::Site => "site".into(),
            Role::Date => "date".into(),
            Role::Qc => "qc".into(),
            Role::GeneticPc(k) => format!("pc{k}"),
        }
    }

    pub fn is_continuous(self) -> bool {
        !matches!(self, Role::Sex | Role::Site)
    }
}

/// Column roles of a confounder matrix, in column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub roles: Vec<Role>,
}

impl Roster {
    pub fn new(conf_dim: usize) -> Result<Self> {
        if !SUPPORTED_DIMS.contains(&conf_dim) {
            return Err(SimError::UnsupportedDim(conf_dim));
        }
        let mut roles = vec![Role::Age];
        if conf_dim >= 2 {
            roles.push(Role::HeadSize);
        }
        if conf_dim >= 4 {
            roles.extend([Role::Sex, Role::Site]);
        }
        if conf_dim >= 6 {
            roles.extend([Role::Date, Role::Qc]);
        }
        roles.extend((1..=conf_dim.saturating_sub(6)).map(Role::GeneticPc));
        Ok(Self { roles })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Indices of the continuous columns.
    pub fn continuous(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.roles[j].is_continuous()).collect()
    }

    pub fn position(&self, role: Role) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    pub fn meta(&self) -> Vec<ColumnMeta> {
        self.roles
            .iter()
            .map(|r| {
                if r.is_continuous() {
                    ColumnMeta::continuous(r.name())
                } else {
                    ColumnMeta::categorical(r.name())
                }
            })
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.roles.iter().map(|r| r.name()).collect()
    }
}

/// Unit-variance raw draw for one column.
fn draw(role: Role, rng: &mut impl Rng) -> f64 {
    match role {
        Role::Age => {
            let a: f64 = rng.sample(Uniform::new(45.0, 80.0).expect("valid range"));
            (a - 62.5) / (35.0 / 12f64.sqrt())
        }
        Role::Date => {
            let u: f64 = rng.random();
            (u - 0.5) * 12f64.sqrt()
        }
        Role::Qc => {
            let v: f64 = rng.sample(LogNormal::new(0.0, 0.5).expect("valid sigma"));
            let (m, s2) = ((0.125f64).exp(), (0.25f64.exp() - 1.0) * 0.25f64.exp());
            (v - m) / s2.sqrt()
        }
        Role::HeadSize | Role::GeneticPc(_) => rng.sample(StandardNormal),
        Role::Sex => f64::from(u8::from(rng.random_bool(0.5))),
        Role::Site => {
            let u: f64 = rng.random();
            if u < 0.4 {
                0.0
            } else if u < 0.75 {
                1.0
            } else {
                2.0
            }
        }
    }
}

/// Fixed sub-diagonal weights of the lower-bidiagonal mixing matrix.
fn mixing_weights(p_cont: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(MIXING_SEED);
    let u = Uniform::new_inclusive(-MAX_MIXING, MAX_MIXING).expect("valid range");
    (0..p_cont.saturating_sub(1)).map(|_| rng.sample(u)).collect()
}

/// `n` rows of the roster for `conf_dim`, column-standardized.
///
/// Column `j` of the continuous block becomes `(c_j + ℓ_j c_{j−1}) / √(1 + ℓ_j²)`,
/// so only neighbours in the block are correlated.
pub fn generate_confounders(n: usize, conf_dim: usize, seed: u64) -> Result<(DMatrix<f64>, Roster)> {
    let roster = Roster::new(conf_dim)?;
    let p = roster.len();
    let mut raw = DMatrix::zeros(n, p);
    for (j, &role) in roster.roles.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, j as u64, 0));
        for i in 0..n {
            raw[(i, j)] = draw(role, &mut rng);
        }
    }
    let cont = roster.continuous();
    let weights = mixing_weights(cont.len());
    let mut mixed = raw.clone();
    for (k, w) in weights.iter().enumerate() {
        let (prev, cur) = (cont[k], cont[k + 1]);
        let norm = (1.0 + w * w).sqrt();
        for i in 0..n {
            mixed[(i, cur)] = (raw[(i, cur)] + w * raw[(i, prev)]) / norm;
        }
    }
    let (z, _, _) = standardize_columns(&mixed);
    Ok((z, roster))
}
