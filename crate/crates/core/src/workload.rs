//! Seeded request and update generators.
//!
//! Users are ranked by social degree into groups; a group is drawn from a
//! configurable distribution and a user uniformly within it. All streams
//! are pure functions of their inputs and seed.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Pareto;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeUpdateRecord, SocialMultiGraph, UpdateOp};
use crate::ids::{SimDuration, SimTime, Uid};
use crate::inference::InferenceParams;

pub const DEFAULT_GROUPS: usize = 10;
/// Constant increment sent by the emulated interaction sensor.
pub const UPDATE_DELTA: f64 = 0.01;
/// Upper bound on the weight filter of generated neighborhood requests.
pub const MAX_REQUEST_WEIGHT: f64 = 0.1;

/// Users grouped by degree rank (group 0 holds the highest degrees) with a
/// probability per group.
#[derive(Clone, Debug)]
pub struct DegreeRankModel {
    groups: Vec<Vec<Uid>>,
    probabilities: Vec<f64>,
    index: WeightedIndex<f64>,
}

/// Zipf-like weights `1 / (g + 1)^exponent`, normalized.
pub fn zipf_probabilities(groups: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..groups)
        .map(|g| 1.0 / ((g + 1) as f64).powf(exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Distinct users adjacent to `u` in either direction.
fn social_degree(graph: &SocialMultiGraph, u: Uid) -> usize {
    let mut nbrs: Vec<Uid> = graph
        .out_neighbors(u)
        .map(|(v, _)| v)
        .chain(graph.in_neighbors(u))
        .filter(|v| *v != u)
        .collect();
    nbrs.sort_unstable();
    nbrs.dedup();
    nbrs.len()
}

impl DegreeRankModel {
    /// Deciles with Zipf(1) probabilities.
    pub fn zipf(graph: &SocialMultiGraph) -> Result<Self> {
        Self::with_probabilities(graph, zipf_probabilities(DEFAULT_GROUPS, 1.0))
    }

    /// One group per probability entry. Users are split into groups of
    /// near-equal size by descending degree, ties by UID.
    pub fn with_probabilities(graph: &SocialMultiGraph, probabilities: Vec<f64>) -> Result<Self> {
        let total: f64 = probabilities.iter().sum();
        if probabilities.is_empty()
            || probabilities.iter().any(|p| !(*p >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParams(format!(
                "group probabilities must be non-negative and sum to 1, got {probabilities:?}"
            )));
        }
        let mut ranked: Vec<(usize, Uid)> =
            graph.uids().map(|u| (social_degree(graph, u), u)).collect();
        if ranked.is_empty() {
            return Err(Error::InvalidParams("empty graph".into()));
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let g = probabilities.len().min(ranked.len());
        let mut groups = vec![Vec::new(); g];
        for (rank, (_, u)) in ranked.iter().enumerate() {
            groups[rank * g / ranked.len()].push(*u);
        }
        // Fewer users than groups: fold the tail mass into the last group.
        let mut probabilities = probabilities;
        let tail: f64 = probabilities[g..].iter().sum();
        probabilities.truncate(g);
        probabilities[g - 1] += tail;
        let index = WeightedIndex::new(&probabilities)
            .map_err(|e| Error::InvalidParams(format!("group probabilities: {e}")))?;
        Ok(DegreeRankModel {
            groups,
            probabilities,
            index,
        })
    }

    pub fn groups(&self) -> &[Vec<Uid>] {
        &self.groups
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn group_of(&self, uid: Uid) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&uid))
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Uid {
        let g = &self.groups[self.index.sample(rng)];
        g[rng.random_range(0..g.len())]
    }
}

/// `count` weight increments. The ego is drawn from `model`, never twice
/// in a row, and redrawn if it has no connections; the alter and label are
/// uniform over its edges. Records are spaced `spacing` apart from `start`
/// and numbered after each ego's last applied sequence.
pub fn gen_weight_updates(
    model: &DegreeRankModel,
    graph: &SocialMultiGraph,
    count: usize,
    start: SimTime,
    spacing: SimDuration,
    seed: u64,
) -> Result<Vec<EdgeUpdateRecord>> {
    let active: Vec<Uid> = graph.uids().filter(|u| graph.out_degree(*u) > 0).collect();
    if active.is_empty() {
        return Err(Error::InvalidParams("graph has no edges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_seq = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(count);
    let mut previous = None;
    while out.len() < count {
        let ego = model.draw(&mut rng);
        if graph.out_degree(ego) == 0 || (active.len() > 1 && previous == Some(ego)) {
            continue;
        }
        previous = Some(ego);
        let alters: Vec<_> = graph.out_neighbors(ego).collect();
        let (alter, labels) = alters[rng.random_range(0..alters.len())];
        let label = labels
            .keys()
            .nth(rng.random_range(0..labels.len()))
            .unwrap()
            .clone();
        let seq = next_seq.entry(ego).or_insert_with(|| graph.last_seq(ego));
        *seq += 1;
        out.push(EdgeUpdateRecord {
            seq: *seq,
            ego,
            alter,
            label,
            op: UpdateOp::AdjustWeight,
            weight_delta_or_value: UPDATE_DELTA,
            issued_at: SimTime(start.0 + spacing.0 * out.len() as u64),
        });
    }
    Ok(out)
}

/// Neighborhood requests from degree-drawn sources with radius uniform in
/// `1..=3` and weight filter uniform in `[0, 0.1]`. Ids start at `first_id`.
pub fn gen_neighborhood_requests(
    model: &DegreeRankModel,
    count: usize,
    first_id: u64,
    seed: u64,
) -> Vec<InferenceParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let ego = model.draw(&mut rng);
            let radius = rng.random_range(1..=3);
            let min_weight = rng.random_range(0.0..=MAX_REQUEST_WEIGHT);
            InferenceParams::neighborhood(ego, None, min_weight, radius)
                .with_id(first_id + i as u64)
        })
        .collect()
}

/// Heavy-tailed per-source request budgets: `⌈Pareto(1, shape)⌉`.
pub fn strength_budgets(sources: usize, shape: f64, seed: u64) -> Result<Vec<u64>> {
    let dist =
        Pareto::new(1.0, shape).map_err(|e| Error::InvalidParams(format!("pareto shape: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..sources)
        .map(|_| dist.sample(&mut rng).ceil().min(u64::MAX as f64) as u64)
        .collect())
}

/// Default Pareto shape for strength budgets.
pub const DEFAULT_BUDGET_SHAPE: f64 = 1.2;

/// `social_strength` requests between distinct users. Sources are drawn
/// uniformly, each issuing a heavy-tailed number of requests to uniform
/// destinations, until `count` requests exist.
pub fn gen_strength_requests(
    graph: &SocialMultiGraph,
    count: usize,
    shape: f64,
    first_id: u64,
    seed: u64,
) -> Result<Vec<InferenceParams>> {
    let users: Vec<Uid> = graph.uids().collect();
    if users.len() < 2 {
        return Err(Error::InvalidParams("need at least two users".into()));
    }
    let dist =
        Pareto::new(1.0, shape).map_err(|e| Error::InvalidParams(format!("pareto shape: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let src = users[rng.random_range(0..users.len())];
        let budget = dist.sample(&mut rng).ceil() as usize;
        for _ in 0..budget.min(count - out.len()) {
            let mut dst = src;
            while dst == src {
                dst = users[rng.random_range(0..users.len())];
            }
            out.push(
                InferenceParams::social_strength(src, dst).with_id(first_id + out.len() as u64),
            );
        }
    }
    Ok(out)
}

/// Generator selection for a workload entry in an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadSpec {
    WeightUpdates {
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_spacing_s")]
        spacing_s: f64,
        #[serde(default)]
        group_probabilities: Option<Vec<f64>>,
    },
    Neighborhood {
        count: usize,
        #[serde(default)]
        seed: u64,
        /// Fixed radius instead of uniform `1..=3`.
        #[serde(default)]
        radius: Option<u32>,
        /// Fixed weight filter instead of uniform `[0, 0.1]`.
        #[serde(default)]
        min_weight: Option<f64>,
        #[serde(default)]
        group_probabilities: Option<Vec<f64>>,
    },
    SocialStrength {
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_shape")]
        budget_shape: f64,
    },
}

fn default_spacing_s() -> f64 {
    1.0
}

fn default_shape() -> f64 {
    DEFAULT_BUDGET_SHAPE
}

impl WorkloadSpec {
    pub fn model(&self, graph: &SocialMultiGraph) -> Result<Option<DegreeRankModel>> {
        match self {
            WorkloadSpec::WeightUpdates {
                group_probabilities,
                ..
            }
            | WorkloadSpec::Neighborhood {
                group_probabilities,
                ..
            } => Ok(Some(match group_probabilities {
                Some(p) => DegreeRankModel::with_probabilities(graph, p.clone())?,
                None => DegreeRankModel::zipf(graph)?,
            })),
            WorkloadSpec::SocialStrength { .. } => Ok(None),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            WorkloadSpec::WeightUpdates {
                spacing_s,
                group_probabilities,
                ..
            } => {
                if !(*spacing_s >= 0.0) {
                    out.push(format!("spacing_s {spacing_s} must be non-negative"));
                }
                check_probabilities(group_probabilities, &mut out);
            }
            WorkloadSpec::Neighborhood {
                radius,
                min_weight,
                group_probabilities,
                ..
            } => {
                if radius.is_some_and(|r| r == 0) {
                    out.push("radius must be at least 1".into());
                }
                if let Some(w) = min_weight {
                    if !(0.0..=1.0).contains(w) {
                        out.push(format!("min_weight {w} outside [0, 1]"));
                    }
                }
                check_probabilities(group_probabilities, &mut out);
            }
            WorkloadSpec::SocialStrength { budget_shape, .. } => {
                if !(*budget_shape > 0.0) {
                    out.push(format!("budget_shape {budget_shape} must be positive"));
                }
            }
        }
        out
    }

    /// Requests for the inference kinds; empty for update workloads.
    pub fn requests(
        &self,
        graph: &SocialMultiGraph,
        first_id: u64,
    ) -> Result<Vec<InferenceParams>> {
        match self {
            WorkloadSpec::WeightUpdates { .. } => Ok(Vec::new()),
            WorkloadSpec::Neighborhood {
                count,
                seed,
                radius,
                min_weight,
                ..
            } => {
                let model = self
                    .model(graph)?
                    .expect("neighborhood workloads are degree ranked");
                let mut reqs = gen_neighborhood_requests(&model, *count, first_id, *seed);
                for q in &mut reqs {
                    if let Some(r) = radius {
                        q.radius = Some(*r);
                    }
                    if let Some(w) = min_weight {
                        q.min_weight = *w;
                    }
                }
                Ok(reqs)
            }
            WorkloadSpec::SocialStrength {
                count,
                seed,
                budget_shape,
            } => gen_strength_requests(graph, *count, *budget_shape, first_id, *seed),
        }
    }
}

fn check_probabilities(p: &Option<Vec<f64>>, out: &mut Vec<String>) {
    if let Some(p) = p {
        let total: f64 = p.iter().sum();
        if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            out.push(format!(
                "group_probabilities must be non-negative and sum to 1, got {p:?}"
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn star_and_chain(n: u128) -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for i in 2..=n {
            g.insert_edge(Uid(1), Uid(i), "f".into(), 0.5, SimTime::ZERO);
            g.insert_edge(Uid(i), Uid(1), "f".into(), 0.5, SimTime::ZERO);
            if i < n {
                g.insert_edge(Uid(i), Uid(i + 1), "f".into(), 0.5, SimTime::ZERO);
            }
        }
        g
    }

    #[test]
    fn zipf_probabilities_sum_to_one_and_decrease() {
        let p = zipf_probabilities(10, 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn group_draws_follow_the_configured_cdf() {
        let g = star_and_chain(200);
        let model = DegreeRankModel::zipf(&g).unwrap();
        assert_eq!(model.group_of(Uid(1)), Some(0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = vec![0f64; model.groups().len()];
        for _ in 0..draws {
            counts[model.group_of(model.draw(&mut rng)).unwrap()] += 1.0;
        }
        let stat: f64 = counts
            .iter()
            .zip(model.probabilities())
            .map(|(o, p)| (o - p * draws as f64).powi(2) / (p * draws as f64))
            .sum();
        let dof = (counts.len() - 1) as f64;
        let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p_value > 0.001, "chi2 {stat}, p {p_value}");
        // Top decile is over-represented relative to its population share.
        assert!(counts[0] / draws as f64 > 0.2);
    }

    #[test]
    fn single_edge_takes_every_update() {
        let mut g = SocialMultiGraph::new();
        g.insert_edge(Uid(1), Uid(2), "f".into(), 0.1, SimTime::ZERO);
        let model = DegreeRankModel::zipf(&g).unwrap();
        let recs = gen_weight_updates(
            &model,
            &g,
            30,
            SimTime::ZERO,
            SimDuration::from_secs_f64(1.0),
            3,
        )
        .unwrap();
        let mut h = g.clone();
        for r in &recs {
            assert_eq!((r.ego, r.alter), (Uid(1), Uid(2)));
            h.apply_update(r).unwrap();
        }
        let w = h.weights(Uid(1), Uid(2), SimTime::from_secs_f64(30.0))[0].1;
        assert!((w - 0.4).abs() < 1e-9);
    }

    #[test]
    fn updates_are_replayable_and_never_repeat_back_to_back() {
        let g = star_and_chain(50);
        let model = DegreeRankModel::zipf(&g).unwrap();
        let gen = || {
            gen_weight_updates(
                &model,
                &g,
                2000,
                SimTime::ZERO,
                SimDuration::from_secs_f64(0.5),
                9,
            )
            .unwrap()
        };
        let a = gen();
        assert_eq!(a, gen());
        assert!(a.windows(2).all(|w| w[0].ego != w[1].ego));
        let mut h = g.clone();
        for r in &a {
            h.apply_update(r).unwrap();
        }
    }

    #[test]
    fn neighborhood_radius_is_uniform() {
        let g = star_and_chain(100);
        let model = DegreeRankModel::zipf(&g).unwrap();
        let reqs = gen_neighborhood_requests(&model, 10_000, 0, 5);
        for r in 1..=3 {
            let share = reqs.iter().filter(|q| q.radius == Some(r)).count() as f64 / 1e4;
            assert!((share - 1.0 / 3.0).abs() < 0.02, "radius {r}: {share}");
        }
        assert!(reqs
            .iter()
            .all(|q| (0.0..=MAX_REQUEST_WEIGHT).contains(&q.min_weight)));
        assert!(reqs.iter().all(|q| q.validate().is_ok()));
    }

    #[test]
    fn strength_budgets_are_heavy_tailed() {
        let mut b = strength_budgets(10_000, DEFAULT_BUDGET_SHAPE, 1).unwrap();
        b.sort_unstable();
        let median = b[b.len() / 2] as f64;
        let max = *b.last().unwrap() as f64;
        assert!(max > 100.0 * median, "median {median}, max {max}");
    }

    #[test]
    fn strength_requests_pick_distinct_pairs() {
        let g = star_and_chain(20);
        let one = gen_strength_requests(&g, 1, 1.2, 0, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_ne!(Some(one[0].ego), one[0].alter);
        let many = gen_strength_requests(&g, 500, 1.2, 0, 1).unwrap();
        assert!(many.iter().all(|q| Some(q.ego) != q.alter));
        assert_eq!(many, gen_strength_requests(&g, 500, 1.2, 0, 1).unwrap());
    }

    #[test]
    fn workload_spec_parses_from_toml() {
        let spec: WorkloadSpec =
            toml::from_str("kind = \"neighborhood\"\ncount = 5\nradius = 3\n").unwrap();
        assert_eq!(
            spec,
            WorkloadSpec::Neighborhood {
                count: 5,
                seed: 0,
                radius: Some(3),
                min_weight: None,
                group_probabilities: None
            }
        );
        let chi: WorkloadSpec =
            toml::from_str("kind = \"neighborhood\"\ncount = 5\nmin_weight = 1.5\n").unwrap();
        assert_eq!(chi.validate().len(), 1);
        let bad: WorkloadSpec = toml::from_str(
            "kind = \"weight-updates\"\ncount = 5\ngroup_probabilities = [0.5, 0.6]\n",
        )
        .unwrap();
        assert_eq!(bad.validate().len(), 1);
    }
}
