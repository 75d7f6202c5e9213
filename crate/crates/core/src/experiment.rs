//! Experiment files and the runner that turns them into CSV outputs.
//!
//! A run is a grid of cells: mapping kind × users per peer, crossed with
//! timeouts (performance, timeout-tradeoff) or hop counts (influence,
//! collusion). Every random choice derives from the spec seed, so the same
//! file and seed reproduce every output byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{parse_edge_list, parse_pair_list, EdgeUpdateRecord, SocialMultiGraph};
use crate::ids::{mix, PeerId, SimDuration, SimTime, Uid};
use crate::inference::{execute_distributed, InferenceParams, InferenceResult, Permissive};
use crate::mapping::{
    detect_communities, peer_ids, plan_from_communities, random_mapping, CommunityMethod,
    MappingKind, MappingPlan,
};
use crate::metrics::{digest, ecdf, mean, mean_ci95};
use crate::overlay::{SimConfig, Simulator};
use crate::resilience::{
    influence_graph, run_collusion, run_influence_experiment, CollusionConfig, CollusionKind,
    InfluenceLedger,
};
use crate::synth::{community_social_graph, gnutella_sized, CommunityGraphParams};
use crate::workload::{gen_weight_updates, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Performance,
    TimeoutTradeoff,
    Influence,
    Collusion,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Performance => "performance",
            ExperimentKind::TimeoutTradeoff => "timeout-tradeoff",
            ExperimentKind::Influence => "influence",
            ExperimentKind::Collusion => "collusion",
        }
    }

    /// Influence and collusion runs measure which peers serve requests.
    pub fn is_resilience(&self) -> bool {
        matches!(self, ExperimentKind::Influence | ExperimentKind::Collusion)
    }
}

/// Where the social graph comes from. Relative paths are resolved against
/// the directory of the spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    /// 1000 users in weighted communities, generated from the spec seed.
    #[serde(rename = "social-1000")]
    Social1000,
    /// Unweighted graph with 10,876 users and 39,994 links, generated from
    /// the spec seed.
    GnutellaSized,
    /// Community generator with explicit parameters; its `seed` field is
    /// replaced by the spec seed.
    Synthetic(CommunityGraphParams),
    /// `ego alter label weight [last_interaction]` lines.
    EdgeList { path: PathBuf },
    /// SNAP-style `a b` lines, read as undirected and unweighted.
    PairList { path: PathBuf },
}

impl GraphSpec {
    pub fn name(&self) -> String {
        match self {
            GraphSpec::Social1000 => "social-1000".into(),
            GraphSpec::GnutellaSized => "gnutella-sized".into(),
            GraphSpec::Synthetic(_) => "synthetic".into(),
            GraphSpec::EdgeList { path } | GraphSpec::PairList { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "graph".into()),
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            GraphSpec::EdgeList { path } | GraphSpec::PairList { path } => Some(path),
            _ => None,
        }
    }

    pub fn load(&self, base_dir: &Path, seed: u64) -> Result<SocialMultiGraph> {
        let open = |p: &Path| -> Result<BufReader<File>> {
            let full = base_dir.join(p);
            File::open(&full)
                .map(BufReader::new)
                .map_err(|e| Error::Config(format!("cannot open graph {}: {e}", full.display())))
        };
        match self {
            GraphSpec::Social1000 => {
                community_social_graph(&CommunityGraphParams::social_1000(seed))
            }
            GraphSpec::GnutellaSized => gnutella_sized(seed),
            GraphSpec::Synthetic(p) => {
                community_social_graph(&CommunityGraphParams { seed, ..p.clone() })
            }
            GraphSpec::EdgeList { path } => parse_edge_list(open(path)?),
            GraphSpec::PairList { path } => parse_pair_list(open(path)?),
        }
    }
}

/// Mapping grid. Performance runs keep `U / base_density` peers and store
/// each user on `N / base_density` of them. Influence and collusion runs
/// put one community of about `N` users on each of `U / N` peers with a
/// single replica. `peers` and `replication` override either rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSpec {
    pub kinds: Vec<MappingKind>,
    pub users_per_peer: Vec<usize>,
    pub base_density: usize,
    /// Defaults to betweenness for performance runs and Louvain otherwise.
    pub method: Option<CommunityMethod>,
    /// Smallest community the betweenness split may cut off.
    pub min_community: usize,
    pub peers: Option<usize>,
    pub replication: Option<usize>,
}

impl Default for MappingSpec {
    fn default() -> Self {
        MappingSpec {
            kinds: vec![MappingKind::Social, MappingKind::Random],
            users_per_peer: vec![10],
            base_density: 10,
            method: None,
            min_community: 5,
            peers: None,
            replication: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollusionSpec {
    pub kinds: Vec<CollusionKind>,
    /// Final share of colluding peers, one cell per value.
    pub fractions: Vec<f64>,
    pub seed_fraction: f64,
    pub repetitions: usize,
}

impl Default for CollusionSpec {
    fn default() -> Self {
        CollusionSpec {
            kinds: vec![CollusionKind::Random, CollusionKind::Social],
            fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            seed_fraction: 0.01,
            repetitions: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub graph: GraphSpec,
    #[serde(default)]
    pub mapping: MappingSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub workloads: Vec<WorkloadSpec>,
    /// Per-hop timeouts in simulated seconds; empty runs without deadlines.
    #[serde(default)]
    pub timeouts_s: Vec<f64>,
    /// Simulated time between consecutive requests.
    #[serde(default = "default_spacing")]
    pub request_spacing_s: f64,
    /// Request hop counts for influence and collusion runs.
    #[serde(default = "default_hops")]
    pub hops: Vec<u32>,
    #[serde(default)]
    pub collusion: CollusionSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_spacing() -> f64 {
    1.0
}

fn default_hops() -> Vec<u32> {
    vec![2, 3]
}

fn default_output() -> PathBuf {
    "out".into()
}

/// One mapping cell of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub kind: MappingKind,
    pub users_per_peer: usize,
    pub peers: usize,
    pub replication: usize,
}

/// What a run produced.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// The human-readable summary, also written to `summary.txt`.
    pub table: String,
}

const SEED_SIM: u64 = 1;
const SEED_WORKLOAD: u64 = 2;
const SEED_MAPPING: u64 = 3;
const SEED_COLLUSION: u64 = 4;

impl ExperimentSpec {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.base_dir = base_dir.into();
        Ok(spec)
    }

    /// Reads a spec file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn output_path(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    fn method(&self) -> CommunityMethod {
        self.mapping.method.unwrap_or(if self.kind.is_resilience() {
            CommunityMethod::Louvain
        } else {
            CommunityMethod::Betweenness
        })
    }

    /// Mapping cells for a graph of `users` users, in file order.
    pub fn layouts(&self, users: usize) -> Vec<Layout> {
        let m = &self.mapping;
        let mut out = Vec::new();
        for &kind in &m.kinds {
            for &n in &m.users_per_peer {
                let n = n.max(1);
                let (peers, replication) = if self.kind.is_resilience() {
                    (m.peers.unwrap_or(users / n), m.replication.unwrap_or(1))
                } else {
                    let base = m.base_density.max(1);
                    (
                        m.peers.unwrap_or(users / base),
                        m.replication.unwrap_or(n / base),
                    )
                };
                out.push(Layout {
                    kind,
                    users_per_peer: n,
                    peers,
                    replication,
                });
            }
        }
        out
    }

    /// The graph experiments run on: as loaded for performance runs, the
    /// undirected unweighted largest component for influence runs.
    pub fn load_graph(&self) -> Result<SocialMultiGraph> {
        let g = self.graph.load(&self.base_dir, self.seed)?;
        Ok(if self.kind.is_resilience() {
            influence_graph(&g)
        } else {
            g
        })
    }

    /// Static checks. An empty list means the spec can run.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = self.graph.path() {
            let full = self.base_dir.join(p);
            if !full.is_file() {
                out.push(format!("graph file {} does not exist", full.display()));
            }
        }
        if let GraphSpec::Synthetic(p) = &self.graph {
            if let Err(e) = p.validate() {
                out.push(e.to_string());
            }
        }
        if let Err(e) = self.sim.validate() {
            out.push(e.to_string());
        }
        for (i, w) in self.workloads.iter().enumerate() {
            out.extend(
                w.validate()
                    .into_iter()
                    .map(|m| format!("workload {}: {m}", i + 1)),
            );
        }
        if !(self.request_spacing_s >= 0.0) {
            out.push(format!(
                "request_spacing_s {} must be non-negative",
                self.request_spacing_s
            ));
        }
        for t in &self.timeouts_s {
            if !(*t > 0.0 && t.is_finite()) {
                out.push(format!("timeout {t} must be a positive number of seconds"));
            }
        }
        let m = &self.mapping;
        if m.kinds.is_empty() || m.users_per_peer.is_empty() {
            out.push("mapping needs at least one kind and one users_per_peer value".into());
        }
        if m.users_per_peer.contains(&0) || m.base_density == 0 || m.min_community == 0 {
            out.push("users_per_peer, base_density and min_community must be positive".into());
        }
        match self.kind {
            ExperimentKind::Performance | ExperimentKind::TimeoutTradeoff => {
                let requests = self
                    .workloads
                    .iter()
                    .any(|w| !matches!(w, WorkloadSpec::WeightUpdates { .. }));
                if !requests {
                    out.push(
                        "no request workload (neighborhood or social-strength) configured".into(),
                    );
                }
                if self.kind == ExperimentKind::TimeoutTradeoff && self.timeouts_s.is_empty() {
                    out.push("timeout-tradeoff needs at least one timeout".into());
                }
            }
            ExperimentKind::Influence | ExperimentKind::Collusion => {
                if self.hops.is_empty() || self.hops.contains(&0) {
                    out.push("hops must list at least one positive hop count".into());
                }
            }
        }
        if self.kind == ExperimentKind::Collusion {
            let c = &self.collusion;
            if c.kinds.is_empty() || c.fractions.is_empty() {
                out.push("collusion needs at least one kind and one fraction".into());
            }
            for &f in &c.fractions {
                let cfg = CollusionConfig {
                    kind: CollusionKind::Random,
                    seed_fraction: c.seed_fraction,
                    target_fraction: f,
                    repetitions: c.repetitions,
                };
                if let Err(e) = cfg.validate() {
                    out.push(e.to_string());
                }
            }
        }
        // Feasibility needs the user count, so only check it once the
        // graph itself is sound.
        if out.is_empty() {
            match self.load_graph() {
                Err(e) => out.push(format!("graph: {e}")),
                Ok(g) => {
                    let users = g.vertex_count();
                    for l in self.layouts(users) {
                        if l.peers == 0 {
                            out.push(format!(
                                "{} users cannot fill a peer at {} users per peer",
                                users, l.users_per_peer
                            ));
                        } else if l.replication == 0 || l.replication > l.peers {
                            out.push(format!(
                                "infeasible mapping: replication {} with {} peers (N = {})",
                                l.replication, l.peers, l.users_per_peer
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// Validates, runs every cell and writes the outputs.
    pub fn run(&self) -> Result<RunReport> {
        let diagnostics = self.validate();
        if !diagnostics.is_empty() {
            return Err(Error::Config(diagnostics.join("; ")));
        }
        let graph = self.load_graph()?;
        let dir = self.output_path();
        fs::create_dir_all(&dir)?;
        let mut report = RunReport::default();
        let mut plans = Planner::new(self, &graph);
        if self.kind.is_resilience() {
            self.run_resilience(&graph, &mut plans, &dir, &mut report)?;
        } else {
            self.run_performance(&graph, &mut plans, &dir, &mut report)?;
        }
        report.warnings.splice(0..0, plans.warnings);
        let mut text = format!(
            "{} ({}), graph {} with {} users, seed {}\n\n{}",
            self.name,
            self.kind.as_str(),
            self.graph.name(),
            graph.vertex_count(),
            self.seed,
            report.table
        );
        for w in &report.warnings {
            let _ = writeln!(text, "warning: {w}");
        }
        report.table = text;
        let path = dir.join("summary.txt");
        fs::write(&path, &report.table)?;
        report.files.push(path);
        Ok(report)
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: mix(self.seed, &[SEED_SIM, self.sim.seed]),
            ..self.sim.clone()
        }
    }

    /// Requests and update records of every workload, ids assigned in
    /// order.
    pub fn workload(
        &self,
        graph: &SocialMultiGraph,
    ) -> Result<(Vec<InferenceParams>, Vec<EdgeUpdateRecord>)> {
        let mut requests = Vec::new();
        let mut updates = Vec::new();
        for (i, w) in self.workloads.iter().enumerate() {
            let w = reseeded(
                w,
                mix(self.seed, &[SEED_WORKLOAD, i as u64, workload_seed(w)]),
            );
            match &w {
                WorkloadSpec::WeightUpdates {
                    count,
                    seed,
                    spacing_s,
                    ..
                } => {
                    let model = w.model(graph)?.expect("update workloads are degree ranked");
                    let spacing = SimDuration::from_secs_f64(*spacing_s);
                    let recs =
                        gen_weight_updates(&model, graph, *count, SimTime::ZERO, spacing, *seed)?;
                    updates.extend(recs);
                }
                _ => {
                    let reqs = w.requests(graph, requests.len() as u64)?;
                    requests.extend(reqs);
                }
            }
        }
        // Sequence numbers must stay gap-free per ego across workloads.
        updates.sort_by_key(|r| r.issued_at);
        let mut next: BTreeMap<Uid, u64> = BTreeMap::new();
        for r in &mut updates {
            let seq = next.entry(r.ego).or_insert_with(|| graph.last_seq(r.ego));
            *seq += 1;
            r.seq = *seq;
        }
        Ok((requests, updates))
    }

    fn run_performance(
        &self,
        graph: &SocialMultiGraph,
        plans: &mut Planner,
        dir: &Path,
        report: &mut RunReport,
    ) -> Result<()> {
        let (requests, updates) = self.workload(graph)?;
        let spacing = SimDuration::from_secs_f64(self.request_spacing_s);
        let timeouts: Vec<Option<f64>> = if self.timeouts_s.is_empty() {
            vec![None]
        } else {
            self.timeouts_s.iter().map(|t| Some(*t)).collect()
        };

        let cell_cols = ["mapping", "users_per_peer", "replication", "timeout_s"];
        let mut req_csv = csv_writer(dir, "requests.csv", report)?;
        let mut header: Vec<&str> = cell_cols.to_vec();
        header.extend([
            "request_id",
            "kind",
            "ego",
            "alter",
            "hops",
            "min_weight",
            "status",
            "answer_size",
            "completion",
            "elapsed_s",
            "messages",
            "peers_contacted",
            "partial",
        ]);
        req_csv.write_record(&header)?;
        let mut peer_csv = csv_writer(dir, "peers.csv", report)?;
        let mut header: Vec<&str> = cell_cols.to_vec();
        header.extend(["peer", "users_hosted", "requests_served", "parts_served"]);
        peer_csv.write_record(&header)?;
        let mut summary_csv = csv_writer(dir, "summary.csv", report)?;
        let mut header: Vec<&str> = cell_cols.to_vec();
        header.extend(["metric", "count", "mean", "p50", "p90", "p99"]);
        summary_csv.write_record(&header)?;
        let mut cdf_csv = csv_writer(dir, "completion_cdf.csv", report)?;
        let mut header: Vec<&str> = cell_cols.to_vec();
        header.extend(["hops", "completion", "fraction"]);
        cdf_csv.write_record(&header)?;
        let mut totals_csv = csv_writer(dir, "totals.csv", report)?;
        let mut header: Vec<&str> = cell_cols.to_vec();
        header.extend([
            "requests",
            "request_messages",
            "updates",
            "messages_sent",
            "messages_delivered",
            "messages_dropped",
        ]);
        totals_csv.write_record(&header)?;

        let mut table = String::new();
        let _ = writeln!(
            table,
            "{:<8} {:>4} {:>3} {:>9} {:>8} {:>10} {:>12} {:>10} {:>12}",
            "mapping",
            "N",
            "K",
            "timeout",
            "requests",
            "completion",
            "p50 elapsed",
            "peers",
            "messages"
        );

        for layout in self.layouts(graph.vertex_count()) {
            let plan = plans.plan(layout)?;
            for &timeout in &timeouts {
                let cell = vec![
                    layout.kind.as_str().to_string(),
                    layout.users_per_peer.to_string(),
                    layout.replication.to_string(),
                    timeout.map_or("inf".to_string(), |t| t.to_string()),
                ];
                let mut sim =
                    Simulator::from_assignment(self.sim_config(), graph.clone(), &plan.assignment)?;
                let mut served: BTreeMap<PeerId, (u64, u64)> = BTreeMap::new();
                let mut metrics: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                let mut by_hops: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                let mut request_messages = 0u64;
                let mut pending = updates.iter().peekable();
                for (i, req) in requests.iter().enumerate() {
                    let at = SimTime(spacing.0 * i as u64);
                    while let Some(rec) = pending.next_if(|r| r.issued_at <= at) {
                        sim.advance_to(rec.issued_at)?;
                        sim.append_record(rec.clone())?;
                    }
                    sim.advance_to(at)?;
                    let req = req.clone().with_timeout(timeout);
                    let entry = plan.home(req.ego).ok_or_else(|| {
                        Error::Invariant(format!("user {} has no home peer", req.ego))
                    })?;
                    let outcome = match execute_distributed(&mut sim, &req, entry, &Permissive) {
                        Ok(r) => Some(r),
                        Err(Error::ServiceUnavailable(_)) => None,
                        Err(e) => return Err(e),
                    };
                    let row = request_row(&cell, &req, outcome.as_ref());
                    req_csv.write_record(&row)?;
                    let (completion, elapsed, messages, contacted, size) = match &outcome {
                        Some(r) => (
                            r.completion,
                            r.elapsed.as_secs_f64(),
                            r.messages_sent,
                            r.serving_peers.len(),
                            r.answer.len(),
                        ),
                        None => (0.0, 0.0, 0, 0, 0),
                    };
                    if let Some(r) = &outcome {
                        for (p, n) in &r.serving_peers {
                            let e = served.entry(*p).or_default();
                            e.0 += 1;
                            e.1 += u64::from(*n);
                        }
                    }
                    request_messages += messages;
                    metrics.entry("completion").or_default().push(completion);
                    metrics.entry("elapsed_s").or_default().push(elapsed);
                    metrics.entry("messages").or_default().push(messages as f64);
                    metrics
                        .entry("peers_contacted")
                        .or_default()
                        .push(contacted as f64);
                    metrics.entry("answer_size").or_default().push(size as f64);
                    by_hops.entry(req.hops()).or_default().push(completion);
                }
                for rec in pending {
                    sim.advance_to(rec.issued_at)?;
                    sim.append_record(rec.clone())?;
                }
                let stats = sim.stats;
                if stats.sent != stats.delivered + stats.dropped {
                    return Err(Error::Invariant(format!(
                        "message conservation: sent {} != delivered {} + dropped {}",
                        stats.sent, stats.delivered, stats.dropped
                    )));
                }

                let hosted = plan.load();
                for (p, users) in &hosted {
                    let (reqs, parts) = served.get(p).copied().unwrap_or_default();
                    let mut row = cell.clone();
                    row.extend([
                        p.to_string(),
                        users.to_string(),
                        reqs.to_string(),
                        parts.to_string(),
                    ]);
                    peer_csv.write_record(&row)?;
                }
                for (name, xs) in &metrics {
                    let d = digest(xs);
                    let mut row = cell.clone();
                    row.extend([
                        name.to_string(),
                        d.count.to_string(),
                        d.mean.to_string(),
                        d.p50.to_string(),
                        d.p90.to_string(),
                        d.p99.to_string(),
                    ]);
                    summary_csv.write_record(&row)?;
                }
                for (hops, xs) in &by_hops {
                    for (v, f) in ecdf(xs) {
                        let mut row = cell.clone();
                        row.extend([hops.to_string(), v.to_string(), f.to_string()]);
                        cdf_csv.write_record(&row)?;
                    }
                }
                let mut row = cell.clone();
                row.extend([
                    requests.len().to_string(),
                    request_messages.to_string(),
                    updates.len().to_string(),
                    stats.sent.to_string(),
                    stats.delivered.to_string(),
                    stats.dropped.to_string(),
                ]);
                totals_csv.write_record(&row)?;

                let get = |k: &str| metrics.get(k).map(Vec::as_slice).unwrap_or(&[]);
                let _ = writeln!(
                    table,
                    "{:<8} {:>4} {:>3} {:>9} {:>8} {:>10.4} {:>12.3} {:>10.2} {:>12}",
                    cell[0],
                    cell[1],
                    cell[2],
                    cell[3],
                    requests.len(),
                    mean(get("completion")),
                    digest(get("elapsed_s")).p50,
                    mean(get("peers_contacted")),
                    request_messages
                );
            }
        }
        for w in [
            &mut req_csv,
            &mut peer_csv,
            &mut summary_csv,
            &mut cdf_csv,
            &mut totals_csv,
        ] {
            w.flush()?;
        }
        report.table = table;
        Ok(())
    }

    fn run_resilience(
        &self,
        graph: &SocialMultiGraph,
        plans: &mut Planner,
        dir: &Path,
        report: &mut RunReport,
    ) -> Result<()> {
        let name = self.graph.name();
        let mut rows = csv_writer(dir, "influence.csv", report)?;
        rows.write_record([
            "graph",
            "mapping",
            "users_per_peer",
            "replication",
            "hops",
            "collusion_kind",
            "collusion_fraction",
            "repetition",
            "peer_or_set_id",
            "influence",
        ])?;
        let mut summary = csv_writer(dir, "influence_summary.csv", report)?;
        summary.write_record([
            "graph",
            "mapping",
            "users_per_peer",
            "replication",
            "hops",
            "collusion_kind",
            "collusion_fraction",
            "count",
            "mean",
            "ci95_half_width",
            "p50",
            "p90",
            "p99",
            "member_mean",
        ])?;
        let mut cdf = csv_writer(dir, "influence_cdf.csv", report)?;
        cdf.write_record([
            "graph",
            "mapping",
            "users_per_peer",
            "replication",
            "hops",
            "influence",
            "fraction",
        ])?;

        let mut table = String::new();
        let _ = writeln!(
            table,
            "{:<8} {:>4} {:>5} {:>4} {:<9} {:>5} {:>10} {:>10}",
            "mapping", "N", "peers", "hops", "collusion", "C", "mean", "ci95"
        );
        let config = self.sim_config();
        for layout in self.layouts(graph.vertex_count()) {
            let plan = plans.plan(layout)?;
            for &hops in &self.hops {
                let ledger = run_influence_experiment(graph, &plan, hops, &config)?;
                let cell = [
                    name.clone(),
                    layout.kind.as_str().to_string(),
                    layout.users_per_peer.to_string(),
                    layout.replication.to_string(),
                    hops.to_string(),
                ];
                let influences = ledger.influences();
                let values: Vec<f64> = influences.iter().map(|(_, v)| *v).collect();
                for (p, v) in &influences {
                    let mut row = cell.to_vec();
                    row.extend([
                        "none".into(),
                        String::new(),
                        "0".into(),
                        p.to_string(),
                        v.to_string(),
                    ]);
                    rows.write_record(&row)?;
                }
                for (v, f) in ecdf(&values) {
                    let mut row = cell.to_vec();
                    row.extend([v.to_string(), f.to_string()]);
                    cdf.write_record(&row)?;
                }
                let ci = mean_ci95(&values);
                let d = digest(&values);
                let mut row = cell.to_vec();
                row.extend([
                    "none".into(),
                    String::new(),
                    d.count.to_string(),
                    ci.mean.to_string(),
                    ci.half_width.to_string(),
                    d.p50.to_string(),
                    d.p90.to_string(),
                    d.p99.to_string(),
                    String::new(),
                ]);
                summary.write_record(&row)?;
                let _ = writeln!(
                    table,
                    "{:<8} {:>4} {:>5} {:>4} {:<9} {:>5} {:>10.5} {:>10.5}",
                    layout.kind.as_str(),
                    layout.users_per_peer,
                    layout.peers,
                    hops,
                    "none",
                    "",
                    ci.mean,
                    ci.half_width
                );
                if self.kind == ExperimentKind::Collusion {
                    self.collusion_cells(
                        graph,
                        &plan,
                        &ledger,
                        &cell,
                        &mut rows,
                        &mut summary,
                        &mut table,
                        report,
                    )?;
                }
            }
        }
        rows.flush()?;
        summary.flush()?;
        cdf.flush()?;
        report.table = table;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn collusion_cells(
        &self,
        graph: &SocialMultiGraph,
        plan: &MappingPlan,
        ledger: &InfluenceLedger,
        cell: &[String; 5],
        rows: &mut csv::Writer<File>,
        summary: &mut csv::Writer<File>,
        table: &mut String,
        report: &mut RunReport,
    ) -> Result<()> {
        let c = &self.collusion;
        for &kind in &c.kinds {
            for &fraction in &c.fractions {
                let cfg = CollusionConfig {
                    kind,
                    seed_fraction: c.seed_fraction,
                    target_fraction: fraction,
                    repetitions: c.repetitions,
                };
                // The seed ignores the fraction so that larger fractions
                // grow the same seeds further.
                let seed = mix(self.seed, &[SEED_COLLUSION, kind as u64]);
                let outcome = run_collusion(ledger, plan, graph, &cfg, seed)?;
                for (r, sets) in outcome.sets.iter().enumerate() {
                    for (i, set) in sets.iter().enumerate() {
                        let mut row = cell.to_vec();
                        row.extend([
                            kind.as_str().to_string(),
                            fraction.to_string(),
                            r.to_string(),
                            format!("set-{i}"),
                            ledger.set_influence(set).to_string(),
                        ]);
                        rows.write_record(&row)?;
                    }
                }
                let d = digest(&outcome.per_repetition);
                let mut row = cell.to_vec();
                row.extend([
                    kind.as_str().to_string(),
                    fraction.to_string(),
                    d.count.to_string(),
                    outcome.summary.mean.to_string(),
                    outcome.summary.half_width.to_string(),
                    d.p50.to_string(),
                    d.p90.to_string(),
                    d.p99.to_string(),
                    mean(&outcome.member_mean).to_string(),
                ]);
                summary.write_record(&row)?;
                let _ = writeln!(
                    table,
                    "{:<8} {:>4} {:>5} {:>4} {:<9} {:>5} {:>10.5} {:>10.5}",
                    cell[1],
                    cell[2],
                    plan.peers.len(),
                    cell[4],
                    kind.as_str(),
                    fraction,
                    outcome.summary.mean,
                    outcome.summary.half_width
                );
                let unique: BTreeSet<String> = outcome.warnings.into_iter().collect();
                report.warnings.extend(unique);
            }
        }
        Ok(())
    }
}

/// Builds mapping plans, reusing detected communities across cells with
/// the same peer count.
struct Planner<'a> {
    spec: &'a ExperimentSpec,
    graph: &'a SocialMultiGraph,
    communities: BTreeMap<usize, Vec<BTreeSet<Uid>>>,
    warnings: Vec<String>,
}

impl<'a> Planner<'a> {
    fn new(spec: &'a ExperimentSpec, graph: &'a SocialMultiGraph) -> Self {
        Planner {
            spec,
            graph,
            communities: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn plan(&mut self, layout: Layout) -> Result<MappingPlan> {
        let peers = peer_ids(layout.peers);
        let seed = mix(self.spec.seed, &[SEED_MAPPING]);
        let plan = match layout.kind {
            MappingKind::Random => {
                let users: Vec<Uid> = self.graph.uids().collect();
                random_mapping(&users, &peers, layout.replication, seed)?
            }
            MappingKind::Social => {
                if !self.communities.contains_key(&layout.peers) {
                    let (found, warnings) = detect_communities(
                        self.graph,
                        self.spec.method(),
                        layout.peers,
                        self.spec.mapping.min_community,
                        seed,
                    );
                    self.warnings.extend(warnings);
                    self.communities.insert(layout.peers, found);
                }
                let found = &self.communities[&layout.peers];
                plan_from_communities(self.graph, found, &peers, layout.replication, seed)?
            }
        };
        plan.validate(self.graph.uids())?;
        Ok(plan)
    }
}

fn csv_writer(dir: &Path, name: &str, report: &mut RunReport) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path)?;
    report.files.push(path);
    Ok(w)
}

fn request_row(
    cell: &[String],
    req: &InferenceParams,
    outcome: Option<&InferenceResult>,
) -> Vec<String> {
    let mut row = cell.to_vec();
    row.extend([
        req.request_id.to_string(),
        req.kind.as_str().to_string(),
        req.ego.to_string(),
        req.alter.map(|a| a.to_string()).unwrap_or_default(),
        req.hops().to_string(),
        req.min_weight.to_string(),
    ]);
    match outcome {
        Some(r) => row.extend([
            "ok".to_string(),
            r.answer.len().to_string(),
            r.completion.to_string(),
            r.elapsed.as_secs_f64().to_string(),
            r.messages_sent.to_string(),
            r.serving_peers.len().to_string(),
            r.partial.to_string(),
        ]),
        None => row.extend(
            ["unavailable", "0", "0", "0", "0", "0", "true"]
                .iter()
                .map(|s| s.to_string()),
        ),
    }
    row
}

fn workload_seed(w: &WorkloadSpec) -> u64 {
    match w {
        WorkloadSpec::WeightUpdates { seed, .. }
        | WorkloadSpec::Neighborhood { seed, .. }
        | WorkloadSpec::SocialStrength { seed, .. } => *seed,
    }
}

fn reseeded(w: &WorkloadSpec, value: u64) -> WorkloadSpec {
    let mut w = w.clone();
    match &mut w {
        WorkloadSpec::WeightUpdates { seed, .. }
        | WorkloadSpec::Neighborhood { seed, .. }
        | WorkloadSpec::SocialStrength { seed, .. } => *seed = value,
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
kind = "performance"
seed = 7

[graph]
source = "synthetic"
users = 200
edges = 600

[mapping]
users_per_peer = [10, 20]

[[workloads]]
kind = "neighborhood"
count = 20

[[workloads]]
kind = "social-strength"
count = 10

[[workloads]]
kind = "weight-updates"
count = 15
"#;

    fn spec(text: &str, out: &Path) -> ExperimentSpec {
        let mut s = ExperimentSpec::from_toml(text, out).unwrap();
        s.output_dir = "run".into();
        s
    }

    #[test]
    fn valid_spec_has_no_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(spec(SMALL, dir.path()).validate(), Vec::<String>::new());
    }

    #[test]
    fn out_of_range_weight_filter_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let text = SMALL.replace("count = 20", "count = 20\nmin_weight = 1.5");
        let d = spec(&text, dir.path()).validate();
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("min_weight 1.5"), "{d:?}");
    }

    #[test]
    fn replication_beyond_peers_is_infeasible() {
        let dir = tempfile::tempdir().unwrap();
        let text = SMALL.replace(
            "users_per_peer = [10, 20]",
            "users_per_peer = [10]\nreplication = 30",
        );
        let d = spec(&text, dir.path()).validate();
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d.iter().all(|m| m.contains("infeasible mapping")));
    }

    #[test]
    fn missing_graph_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let text = SMALL.replace(
            "source = \"synthetic\"\nusers = 200\nedges = 600",
            "source = \"pair-list\"\npath = \"nope.txt\"",
        );
        let d = spec(&text, dir.path()).validate();
        assert!(d.iter().any(|m| m.contains("does not exist")), "{d:?}");
    }

    #[test]
    fn layouts_follow_experiment_kind() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(SMALL, dir.path());
        s.mapping.users_per_peer = vec![10, 30, 50];
        let perf: Vec<_> = s
            .layouts(1000)
            .iter()
            .map(|l| (l.peers, l.replication))
            .collect();
        assert_eq!(perf[..3], [(100, 1), (100, 3), (100, 5)]);
        s.kind = ExperimentKind::Influence;
        s.mapping.users_per_peer = vec![10, 50, 100];
        let infl: Vec<_> = s
            .layouts(10_876)
            .iter()
            .map(|l| (l.peers, l.replication))
            .collect();
        assert_eq!(infl[..3], [(1087, 1), (217, 1), (108, 1)]);
    }

    fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn performance_run_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let report = spec(SMALL, a.path()).run().unwrap();
        spec(SMALL, b.path()).run().unwrap();
        let (fa, fb) = (
            read_all(&a.path().join("run")),
            read_all(&b.path().join("run")),
        );
        assert_eq!(fa.len(), 6);
        assert_eq!(fa, fb);
        assert_eq!(report.files.len(), 6);

        // Summary means are recomputable from the per-request rows.
        let mut rdr = csv::Reader::from_path(a.path().join("run/requests.csv")).unwrap();
        let mut completions: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in rdr.records() {
            let r = r.unwrap();
            completions
                .entry((r[0].to_string(), r[1].to_string()))
                .or_default()
                .push(r[12].parse().unwrap());
        }
        assert_eq!(completions.len(), 4);
        let mut rdr = csv::Reader::from_path(a.path().join("run/summary.csv")).unwrap();
        for r in rdr.records() {
            let r = r.unwrap();
            if &r[4] == "completion" {
                let xs = &completions[&(r[0].to_string(), r[1].to_string())];
                assert_eq!(r[6].parse::<f64>().unwrap(), mean(xs));
            }
        }
    }

    #[test]
    fn seed_changes_outputs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        spec(SMALL, a.path()).run().unwrap();
        spec(&SMALL.replace("seed = 7", "seed = 8"), b.path())
            .run()
            .unwrap();
        assert_ne!(
            fs::read(a.path().join("run/requests.csv")).unwrap(),
            fs::read(b.path().join("run/requests.csv")).unwrap()
        );
    }

    #[test]
    fn collusion_run_writes_unified_rows() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
kind = "collusion"
seed = 3
hops = [2]

[graph]
source = "synthetic"
users = 200
edges = 600

[collusion]
fractions = [0.1, 0.3]
seed_fraction = 0.05
repetitions = 2
"#;
        let s = spec(text, dir.path());
        assert_eq!(s.validate(), Vec::<String>::new());
        s.run().unwrap();
        let mut rdr = csv::Reader::from_path(dir.path().join("run/influence.csv")).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header[5], "collusion_kind");
        assert_eq!(header[8], "peer_or_set_id");
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        // 20 peers per mapping with individual rows, and one set per seed.
        let individual = rows.iter().filter(|r| &r[5] == "none").count();
        assert_eq!(individual, 40);
        let sets = rows.iter().filter(|r| &r[5] != "none").count();
        assert_eq!(sets, 2 * 2 * 2 * 2);
        for r in &rows {
            let v: f64 = r[9].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
