//! Latin hypercube and uniform sampling over spaces and boxes, plus the
//! relative-density sizing diagnostic J = n_s^(1/k).

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::UncertaintySpace;
use crate::prim::ScenarioBox;
use crate::seed;

/// A design of n points over a space, in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    pub points: Vec<Vec<f64>>,
    pub space: UncertaintySpace,
}

impl SampleMatrix {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    /// CSV with a header row of dimension names.
    pub fn to_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.space.dims.iter().map(|d| d.name.as_str()))?;
        for row in &self.points {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(space: &UncertaintySpace, reader: impl Read) -> Result<SampleMatrix> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let names: Vec<String> = space.dims.iter().map(|d| d.name.clone()).collect();
        if header != names {
            return Err(Error::InvalidConfig(format!(
                "csv header {header:?} does not match space dimensions {names:?}"
            )));
        }
        let mut points = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad float `{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != space.k() {
                return Err(Error::DimensionMismatch {
                    expected: space.k(),
                    got: row.len(),
                });
            }
            points.push(row);
        }
        Ok(SampleMatrix {
            points,
            space: space.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDiagnostics {
    #[serde(rename = "J")]
    pub j: f64,
    pub n_s: u64,
    pub k: u64,
    /// J >= 1.5, the lower end of the recommended sizing band.
    pub adequate: bool,
}

/// J = n_s^(1/k): points per dimension if the design were a full grid.
pub fn relative_density(n_s: u64, k: u64) -> SamplingDiagnostics {
    assert!(n_s >= 1 && k >= 1, "relative_density needs n_s, k >= 1");
    let j = (n_s as f64).powf(1.0 / k as f64);
    SamplingDiagnostics {
        j,
        n_s,
        k,
        adequate: j >= 1.5,
    }
}

/// Latin hypercube design: per dimension, [low, high] is split into n equal
/// intervals holding exactly one point each; interval order is a random
/// permutation and the within-interval offset is uniform.
pub fn lhs(space: &UncertaintySpace, n: usize, seed_value: u64) -> SampleMatrix {
    lhs_with(space, n, &mut seed::rng_from(seed_value))
}

pub fn lhs_with(space: &UncertaintySpace, n: usize, rng: &mut ChaCha8Rng) -> SampleMatrix {
    let k = space.k();
    let mut points = vec![vec![0.0; k]; n];
    for (d, dim) in space.dims.iter().enumerate() {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let width = dim.high - dim.low;
        for (i, point) in points.iter_mut().enumerate() {
            let offset: f64 = rng.gen();
            point[d] = dim.low + (perm[i] as f64 + offset) / n as f64 * width;
        }
    }
    SampleMatrix {
        points,
        space: space.clone(),
    }
}

/// Uniform sampling over the whole space.
pub fn uniform(space: &UncertaintySpace, n: usize, seed_value: u64) -> SampleMatrix {
    let full = ScenarioBox::full(space.k());
    uniform_in_box(&full, space, n, seed_value).expect("full box is never degenerate")
}

/// Uniform over the box interior; unrestricted dimensions are drawn over
/// the full space range.
pub fn uniform_in_box(
    b: &ScenarioBox,
    space: &UncertaintySpace,
    n: usize,
    seed_value: u64,
) -> Result<SampleMatrix> {
    uniform_in_box_with(b, space, n, &mut seed::rng_from(seed_value))
}

pub fn uniform_in_box_with(
    b: &ScenarioBox,
    space: &UncertaintySpace,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleMatrix> {
    let ranges = box_ranges(b, space)?;
    let points = (0..n)
        .map(|_| {
            ranges
                .iter()
                .map(|&(lo, hi)| lo + rng.gen::<f64>() * (hi - lo))
                .collect()
        })
        .collect();
    Ok(SampleMatrix {
        points,
        space: space.clone(),
    })
}

/// One point per draw: pick a restricted dimension and one of its two
/// faces uniformly, pin that coordinate to the face, draw the rest within
/// the box.
pub fn uniform_on_border(
    b: &ScenarioBox,
    space: &UncertaintySpace,
    n: usize,
    seed_value: u64,
) -> Result<SampleMatrix> {
    uniform_on_border_with(b, space, n, &mut seed::rng_from(seed_value))
}

pub fn uniform_on_border_with(
    b: &ScenarioBox,
    space: &UncertaintySpace,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleMatrix> {
    let restricted = b.restricted_dims();
    if restricted.is_empty() {
        return Err(Error::UnrestrictedBox);
    }
    let ranges = box_ranges(b, space)?;
    let points = (0..n)
        .map(|_| {
            let face_dim = restricted[rng.gen_range(0..restricted.len())];
            let take_high: bool = rng.gen();
            ranges
                .iter()
                .enumerate()
                .map(|(d, &(lo, hi))| {
                    if d == face_dim {
                        if take_high {
                            hi
                        } else {
                            lo
                        }
                    } else {
                        lo + rng.gen::<f64>() * (hi - lo)
                    }
                })
                .collect()
        })
        .collect();
    Ok(SampleMatrix {
        points,
        space: space.clone(),
    })
}

fn box_ranges(b: &ScenarioBox, space: &UncertaintySpace) -> Result<Vec<(f64, f64)>> {
    if b.limits.len() != space.k() {
        return Err(Error::DimensionMismatch {
            expected: space.k(),
            got: b.limits.len(),
        });
    }
    b.limits
        .iter()
        .zip(&space.dims)
        .enumerate()
        .map(|(d, (limit, dim))| match limit {
            Some((lo, hi)) if hi > lo => Ok((*lo, *hi)),
            Some(_) => Err(Error::DegenerateBox(d)),
            None => Ok((dim.low, dim.high)),
        })
        .collect()
}
