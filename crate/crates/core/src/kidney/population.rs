//! Synthetic patient-donor pairs and the compatibility graph between them.

use rand::Rng;
use rand_distr::{Dirichlet, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, keyed_uniform};

/// ABO blood group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BloodType {
    O,
    A,
    B,
    AB,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [BloodType::O, BloodType::A, BloodType::B, BloodType::AB];

    /// Standard donor-to-patient ABO rule.
    pub fn can_donate_to(self, patient: BloodType) -> bool {
        use BloodType::*;
        matches!(
            (self, patient),
            (O, _) | (A, A) | (A, AB) | (B, B) | (B, AB) | (AB, AB)
        )
    }
}

/// A PRA band: with relative `weight`, a patient's PRA is uniform on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PraBand {
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Parameters of the synthetic population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub pairs: usize,
    pub hospitals: usize,
    pub max_hospital_size: usize,
    /// Spread of the log-normal hospital size weights.
    pub size_sigma: f64,
    /// Frequencies of O, A, B, AB among patients.
    pub patient_abo: [f64; 4],
    /// Frequencies of O, A, B, AB among donors.
    pub donor_abo: [f64; 4],
    pub pra_bands: Vec<PraBand>,
    /// Dirichlet concentration of per-hospital PRA band weights around
    /// `pra_bands`. Smaller values make hospitals more different; `None`
    /// gives every hospital the same mix.
    pub hospital_mix_concentration: Option<f64>,
    /// Keep only pairs whose donor cannot give to their own patient.
    pub require_incompatible: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let us = [0.44, 0.42, 0.10, 0.04];
        PopulationConfig {
            pairs: 1881,
            hospitals: 84,
            max_hospital_size: 150,
            size_sigma: 1.2,
            patient_abo: us,
            donor_abo: us,
            pra_bands: vec![
                PraBand {
                    weight: 0.60,
                    lo: 0.0,
                    hi: 0.2,
                },
                PraBand {
                    weight: 0.25,
                    lo: 0.2,
                    hi: 0.9,
                },
                PraBand {
                    weight: 0.15,
                    lo: 0.9,
                    hi: 1.0,
                },
            ],
            hospital_mix_concentration: Some(2.0),
            require_incompatible: true,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.hospitals == 0 || self.max_hospital_size == 0 {
            return Err(Error::invalid(
                "pairs, hospitals and max_hospital_size must be positive",
            ));
        }
        if self.pairs > self.hospitals * self.max_hospital_size {
            return Err(Error::invalid(format!(
                "{} pairs do not fit in {} hospitals of at most {}",
                self.pairs, self.hospitals, self.max_hospital_size
            )));
        }
        for (name, f) in [
            ("patient_abo", &self.patient_abo),
            ("donor_abo", &self.donor_abo),
        ] {
            if f.iter().any(|x| !(*x >= 0.0)) || f.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative and not all zero"
                )));
            }
        }
        if self.pra_bands.is_empty()
            || self
                .pra_bands
                .iter()
                .any(|b| !(b.weight >= 0.0 && 0.0 <= b.lo && b.lo <= b.hi && b.hi <= 1.0))
            || self.pra_bands.iter().map(|b| b.weight).sum::<f64>() <= 0.0
        {
            return Err(Error::invalid(
                "PRA bands need weights >= 0 and 0 <= lo <= hi <= 1",
            ));
        }
        if let Some(c) = self.hospital_mix_concentration {
            if !(c > 0.0) {
                return Err(Error::invalid(
                    "hospital_mix_concentration must be positive",
                ));
            }
        }
        if !(self.size_sigma >= 0.0) {
            return Err(Error::invalid("size_sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: usize,
    pub hospital: usize,
    pub patient: BloodType,
    pub donor: BloodType,
    pub pra: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hospital {
    pub id: usize,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPopulation {
    pub pairs: Vec<Pair>,
    pub hospitals: Vec<Hospital>,
    /// Seed of the crossmatch draws.
    pub seed: u64,
}

const CROSSMATCH_KEY: u64 = 0x63726f73;
const OWN_PAIR_KEY: u64 = 0x6f776e;

fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn hospital_sizes<R: Rng>(cfg: &PopulationConfig, rng: &mut R) -> Result<Vec<usize>> {
    let h = cfg.hospitals;
    let weights: Vec<f64> = if cfg.size_sigma > 0.0 {
        let ln = LogNormal::new(0.0, cfg.size_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        (0..h).map(|_| ln.sample(rng)).collect()
    } else {
        vec![1.0; h]
    };
    let total: f64 = weights.iter().sum();
    let floor = if cfg.pairs >= h { 1 } else { 0 };
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| {
            ((cfg.pairs as f64 * w / total).round() as usize).clamp(floor, cfg.max_hospital_size)
        })
        .collect();
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).expect("finite"));
    loop {
        let sum: usize = sizes.iter().sum();
        if sum == cfg.pairs {
            break;
        }
        if sum < cfg.pairs {
            let &i = order
                .iter()
                .find(|&&i| sizes[i] < cfg.max_hospital_size)
                .expect("capacity was validated");
            sizes[i] += 1;
        } else {
            let &i = order
                .iter()
                .max_by_key(|&&i| sizes[i])
                .filter(|&&i| sizes[i] > floor)
                .expect("total above floor");
            sizes[i] -= 1;
        }
    }
    Ok(sizes)
}

/// A reproducible population. Hospitals left without pairs are dropped and
/// the rest renumbered.
pub fn generate_population(cfg: &PopulationConfig, seed: u64) -> Result<PairPopulation> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, 0);
    let sizes: Vec<usize> = hospital_sizes(cfg, &mut rng)?
        .into_iter()
        .filter(|&s| s > 0)
        .collect();
    let base: Vec<f64> = cfg.pra_bands.iter().map(|b| b.weight).collect();
    let mut pairs = Vec::with_capacity(cfg.pairs);
    let mut hospitals = Vec::with_capacity(sizes.len());
    for (hid, &size) in sizes.iter().enumerate() {
        let mix: Vec<f64> = match cfg.hospital_mix_concentration {
            Some(c) if base.iter().filter(|&&w| w > 0.0).count() > 1 => {
                let alpha: Vec<f64> = base.iter().map(|w| (c * w).max(1e-3)).collect();
                Dirichlet::new(&alpha)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng)
            }
            _ => base.clone(),
        };
        hospitals.push(Hospital {
            id: hid,
            pairs: size,
        });
        for _ in 0..size {
            let id = pairs.len();
            let mut attempt = 0u64;
            loop {
                let patient = BloodType::ALL[pick(&cfg.patient_abo, rng.gen())];
                let donor = BloodType::ALL[pick(&cfg.donor_abo, rng.gen())];
                let band = &cfg.pra_bands[pick(&mix, rng.gen())];
                let pra = band.lo + (band.hi - band.lo) * rng.gen::<f64>();
                let own = donor.can_donate_to(patient)
                    && keyed_uniform(&[seed, OWN_PAIR_KEY, id as u64, attempt]) >= pra;
                attempt += 1;
                if !cfg.require_incompatible || !own {
                    pairs.push(Pair {
                        id,
                        hospital: hid,
                        patient,
                        donor,
                        pra,
                    });
                    break;
                }
                if attempt > 100_000 {
                    return Err(Error::invalid(
                        "could not draw an incompatible pair; relax require_incompatible",
                    ));
                }
            }
        }
    }
    Ok(PairPopulation {
        pairs,
        hospitals,
        seed,
    })
}

/// Mutual two-way compatibility between population pairs.
///
/// Donor of `i` can give to patient of `j` when ABO allows it and a
/// crossmatch draw succeeds with probability `1 - PRA_j`. The draw is a
/// fixed function of `(seed, i, j)`, so each ordered pair has one answer.
#[derive(Clone, Debug)]
pub struct CompatModel {
    n: usize,
    mutual: Vec<bool>,
}

impl CompatModel {
    pub fn new(pop: &PairPopulation) -> Self {
        let n = pop.pairs.len();
        let directed = |i: usize, j: usize| {
            let (d, p) = (&pop.pairs[i], &pop.pairs[j]);
            d.donor.can_donate_to(p.patient)
                && keyed_uniform(&[pop.seed, CROSSMATCH_KEY, i as u64, j as u64]) >= p.pra
        };
        let mut mutual = vec![false; n * n];
        for i in 0..n {
            for j in i..n {
                let ok = i != j && directed(i, j) && directed(j, i);
                mutual[i * n + j] = ok;
                mutual[j * n + i] = ok;
            }
        }
        CompatModel { n, mutual }
    }

    /// Whether pairs `i` and `j` can swap donors. A pair never matches itself.
    pub fn mutual(&self, i: usize, j: usize) -> bool {
        self.mutual[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
