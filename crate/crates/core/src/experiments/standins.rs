//! Synthetic substitutes shaped like the credit, recidivism and community
//! crime tables commonly used in fairwashing studies. Each has a protected
//! column that drives the label and unrelated columns usable as foils.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandinKind {
    German,
    Compas,
    Communities,
}

impl StandinKind {
    pub const ALL: [StandinKind; 3] = [StandinKind::German, StandinKind::Compas, StandinKind::Communities];

    pub fn id(self) -> &'static str {
        match self {
            StandinKind::German => "german",
            StandinKind::Compas => "compas",
            StandinKind::Communities => "communities",
        }
    }
}

impl fmt::Display for StandinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for StandinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StandinKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown stand-in dataset '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct Standin {
    pub kind: StandinKind,
    /// Raw features with labels.
    pub dataset: Dataset,
    pub protected: String,
    /// Two foil candidates; one-foil runs use the first.
    pub foils: Vec<String>,
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p { 1.0 } else { 0.0 }
}

/// Generates `rows` rows of the requested stand-in.
pub fn generate_standin(kind: StandinKind, rows: usize, seed: u64) -> Result<Standin> {
    if rows < 10 {
        return Err(Error::Config(format!("stand-in needs at least 10 rows, got {rows}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let (names, protected, foils): (&[&str], &str, [&str; 2]) = match kind {
        StandinKind::German => (
            &[
                "gender",
                "loan_rate_pct_income",
                "unrelated_column_one",
                "duration_months",
                "credit_amount",
                "age",
                "existing_credits",
            ],
            "gender",
            ["loan_rate_pct_income", "unrelated_column_one"],
        ),
        StandinKind::Compas => (
            &[
                "race",
                "unrelated_column_one",
                "unrelated_column_two",
                "age",
                "priors_count",
                "length_of_stay",
                "charge_degree",
                "sex",
            ],
            "race",
            ["unrelated_column_one", "unrelated_column_two"],
        ),
        StandinKind::Communities => (
            &[
                "race_pct_white",
                "unrelated_column_one",
                "unrelated_column_two",
                "pct_unemployed",
                "median_income",
                "pct_divorced",
                "pop_density",
            ],
            "race_pct_white",
            ["unrelated_column_one", "unrelated_column_two"],
        ),
    };
    let mut data = Vec::with_capacity(rows * names.len());
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (row, p): (Vec<f64>, f64) = match kind {
            StandinKind::German => {
                let g = bernoulli(&mut rng, 0.69);
                let rate = f64::from(rng.random_range(1u8..=4));
                let dur = (20.0 + 12.0 * std.sample(&mut rng)).clamp(4.0, 72.0).round();
                let amount = (3000.0 + 2500.0 * std.sample(&mut rng)).abs().round() + 250.0;
                let age = (35.0 + 11.0 * std.sample(&mut rng)).clamp(19.0, 75.0).round();
                let credits = f64::from(rng.random_range(1u8..=3));
                let p = if g == 1.0 { 0.85 } else { 0.2 } - 0.002 * (dur - 20.0);
                (vec![g, rate, bernoulli(&mut rng, 0.5), dur, amount, age, credits], p)
            }
            StandinKind::Compas => {
                let race = bernoulli(&mut rng, 0.51);
                let age = (34.0 + 11.0 * std.sample(&mut rng)).clamp(18.0, 80.0).round();
                let priors = (2.0 * std.sample(&mut rng).abs() + 2.0 * race * rng.random::<f64>()).round();
                let stay = (15.0 * std.sample(&mut rng).abs()).round();
                let p = if race == 1.0 { 0.8 } else { 0.15 } + 0.01 * (priors - 2.0);
                (
                    vec![
                        race,
                        bernoulli(&mut rng, 0.5),
                        bernoulli(&mut rng, 0.5),
                        age,
                        priors,
                        stay,
                        bernoulli(&mut rng, 0.35),
                        bernoulli(&mut rng, 0.8),
                    ],
                    p,
                )
            }
            StandinKind::Communities => {
                let white = rng.random::<f64>().powf(0.5);
                let unemp = (0.06 + 0.03 * std.sample(&mut rng)).clamp(0.0, 0.4);
                let income = (30000.0 + 9000.0 * std.sample(&mut rng) + 8000.0 * white).max(8000.0).round();
                let divorced = (0.1 + 0.03 * std.sample(&mut rng)).clamp(0.0, 0.5);
                let density = (2000.0 * std.sample(&mut rng).abs()).round();
                let p = if white > 0.7 { 0.1 } else { 0.85 } + 0.5 * (unemp - 0.06);
                (
                    vec![
                        white,
                        std.sample(&mut rng),
                        std.sample(&mut rng),
                        unemp,
                        income,
                        divorced,
                        density,
                    ],
                    p,
                )
            }
        };
        labels.push(u8::from(rng.random::<f64>() < p.clamp(0.0, 1.0)));
        data.extend(row);
    }
    let dataset = Dataset::new(
        Matrix::new(rows, names.len(), data)?,
        names.iter().map(|s| s.to_string()).collect(),
        Some(labels),
    )?;
    Ok(Standin {
        kind,
        dataset,
        protected: protected.to_string(),
        foils: foils.iter().map(|s| s.to_string()).collect(),
    })
}
