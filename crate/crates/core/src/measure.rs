//! Discrete non-negative measures on `[0, 1]`, their separation,
//! neighbourhoods and groupings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Σ aᵢ δ_{tᵢ}` with strictly increasing `tᵢ ∈ (0, 1)` and `aᵢ > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DiscreteMeasure {
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from unsorted atoms.
    ///
    /// Atoms are sorted and duplicate locations are coalesced by summing
    /// their weights. Locations must lie in the open interval `(0, 1)` and
    /// weights must be positive and finite.
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            )));
        }
        let mut atoms: Vec<(f64, f64)> = locations.into_iter().zip(weights).collect();
        for &(t, a) in &atoms {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidInput(format!("location {t} outside (0,1)")));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidInput(format!("weight {a} is not positive")));
            }
        }
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut locs: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut ws: Vec<f64> = Vec::with_capacity(atoms.len());
        for (t, a) in atoms {
            if locs.last() == Some(&t) {
                *ws.last_mut().expect("parallel vectors") += a;
            } else {
                locs.push(t);
                ws.push(a);
            }
        }
        Ok(Self { locations: locs, weights: ws })
    }

    /// Builds a measure from `(location, weight)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    /// The empty measure.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Atom locations in increasing order.
    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    /// Atom weights aligned with [`Self::locations`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of atoms `k`.
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    /// True for the zero measure.
    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Iterator over `(location, weight)` pairs.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.weights.iter().copied())
    }

    /// Serializes as one `location,weight` line per atom with round-trip precision.
    pub fn to_text(&self) -> String {
        let mut s = String::from("location,weight\n");
        for (t, a) in self.atoms() {
            s.push_str(&format!("{t:?},{a:?}\n"));
        }
        s
    }

    /// Parses the format written by [`Self::to_text`]; a header line is optional.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.starts_with('#') || line.starts_with("location") {
                continue;
            }
            let mut it = line.split(',').map(str::trim);
            let parse = |v: Option<&str>| -> Result<f64> {
                v.ok_or_else(|| Error::InvalidInput(format!("malformed line {line:?}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("{e} in line {line:?}")))
            };
            let t = parse(it.next())?;
            let a = parse(it.next())?;
            pairs.push((t, a));
        }
        Self::from_pairs(&pairs)
    }
}

/// Total variation norm, the sum of the weights.
pub fn tv_norm(mu: &DiscreteMeasure) -> f64 {
    mu.weights.iter().sum()
}

/// Minimum pairwise distance over the support together with `{0, 1}`.
pub fn min_separation(mu: &DiscreteMeasure) -> Result<f64> {
    min_separation_of(mu.locations())
}

/// [`min_separation`] for a bare sorted location list.
pub fn min_separation_of(locations: &[f64]) -> Result<f64> {
    if locations.is_empty() {
        return Err(Error::NoSources);
    }
    let mut prev = 0.0;
    let mut best = f64::INFINITY;
    for &t in locations.iter().chain(std::iter::once(&1.0)) {
        best = best.min(t - prev);
        prev = t;
    }
    Ok(best)
}

/// Closed neighbourhoods `[tᵢ − ε, tᵢ + ε] ∩ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSet {
    /// One clipped interval per source.
    pub intervals: Vec<(f64, f64)>,
    /// Radius ε.
    pub epsilon: f64,
    /// True iff `ε ≤ Δ(T)/2`.
    pub disjoint: bool,
}

impl NeighborhoodSet {
    /// Index of the first interval containing `t`.
    pub fn containing(&self, t: f64) -> Option<usize> {
        self.intervals.iter().position(|&(lo, hi)| t >= lo && t <= hi)
    }

    /// True when `t` lies in no interval.
    pub fn in_complement(&self, t: f64) -> bool {
        self.containing(t).is_none()
    }
}

/// Neighbourhoods of radius ε around every source.
pub fn neighborhoods(mu: &DiscreteMeasure, epsilon: f64) -> NeighborhoodSet {
    neighborhoods_of(mu.locations(), epsilon)
}

/// [`neighborhoods`] for a bare sorted location list.
pub fn neighborhoods_of(locations: &[f64], epsilon: f64) -> NeighborhoodSet {
    let intervals = locations
        .iter()
        .map(|&t| ((t - epsilon).max(0.0), (t + epsilon).min(1.0)))
        .collect();
    let disjoint = match min_separation_of(locations) {
        Ok(d) => epsilon <= d / 2.0,
        Err(_) => true,
    };
    NeighborhoodSet { intervals, epsilon, disjoint }
}

/// One group of consecutive sources closer than 2ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Indices of member sources.
    pub members: Vec<usize>,
    /// Sum of member weights.
    pub weight: f64,
    /// Representative point ξ, the weight-weighted mean location.
    pub representative: f64,
    /// Union of member neighbourhoods, clipped to `[0, 1]`.
    pub interval: (f64, f64),
}

/// Partition of the sources into groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedPartition {
    /// Groups in increasing order of location.
    pub groups: Vec<Group>,
    /// Radius ε used for the merge rule.
    pub epsilon: f64,
}

impl GroupedPartition {
    /// Representatives ξᵢ in order.
    pub fn representatives(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.representative).collect()
    }
}

/// Greedy left-to-right merge of consecutive sources with gap `< 2ε`.
pub fn group_partition(mu: &DiscreteMeasure, epsilon: f64) -> GroupedPartition {
    let mut groups: Vec<Group> = Vec::new();
    let mut prev: Option<f64> = None;
    for (i, (t, a)) in mu.atoms().enumerate() {
        let merge = matches!(prev, Some(p) if t - p < 2.0 * epsilon);
        if merge {
            let g = groups.last_mut().expect("merge implies an open group");
            g.members.push(i);
            g.weight += a;
            g.interval.1 = (t + epsilon).min(1.0);
        } else {
            groups.push(Group {
                members: vec![i],
                weight: a,
                representative: 0.0,
                interval: ((t - epsilon).max(0.0), (t + epsilon).min(1.0)),
            });
        }
        prev = Some(t);
    }
    for g in &mut groups {
        let moment: f64 = g.members.iter().map(|&i| mu.locations[i] * mu.weights[i]).sum();
        g.representative = moment / g.weight;
    }
    GroupedPartition { groups, epsilon }
}

/// Sum of weights located in the closed interval `[lo, hi]`.
pub fn local_mass(mu: &DiscreteMeasure, lo: f64, hi: f64) -> f64 {
    local_mass_of(mu.locations(), mu.weights(), lo, hi)
}

/// [`local_mass`] over parallel location and weight slices.
pub fn local_mass_of(locations: &[f64], weights: &[f64], lo: f64, hi: f64) -> f64 {
    locations
        .iter()
        .zip(weights)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(_, a)| *a)
        .sum()
}
