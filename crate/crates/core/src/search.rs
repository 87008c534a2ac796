//! Two-phase constrained exhaustive search.
//!
//! Phase 0 sweeps Cell-A with Cell-B tied to it and checks only the memory
//! budget. Phase 1 freezes the phase-0 winner as Cell-A, sweeps Cell-B, and
//! requires all four budgets. Both phases keep the strict maximum, so equal
//! scores resolve to the lexicographically first candidate.
//!
//! Candidates within a phase are evaluated in parallel and reduced in
//! enumeration order, which makes the result independent of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{build_network, enumerate_cells, CellConfig, NetworkArch, CELL_COUNT};
use crate::batch::Batch;
use crate::error::{Error, Phase, Result};
use crate::fitness::{quantized_activity, score_activity, BetaRule, FitnessScore, INITIAL_BEST};
use crate::imc::{area, evaluate_costs, latency, map_network, CostReport, HardwareConfig};
use crate::quant::QuantSpec;
use crate::spike::{ActivityRecord, LifParams, WeightSeed};

/// Serde helpers for budgets: numbers, or `"inf"` for unbounded.
pub mod budget {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "unbounded" => Ok(f64::INFINITY),
                _ => Err(de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(with = "budget")]
    pub mem_params_max: f64,
    #[serde(with = "budget")]
    pub area_mm2_max: f64,
    #[serde(with = "budget")]
    pub latency_ms_max: f64,
    #[serde(with = "budget")]
    pub energy_uj_max: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            mem_params_max: 10e6,
            area_mm2_max: 1000.0,
            latency_ms_max: 500.0,
            energy_uj_max: 1000.0,
        }
    }
}

/// Cost / budget for one axis; 0 when unbounded.
fn ratio(cost: f64, budget: f64) -> f64 {
    if budget.is_infinite() {
        0.0
    } else if budget == 0.0 {
        if cost == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        cost / budget
    }
}

impl Constraints {
    pub fn unbounded() -> Self {
        Self {
            mem_params_max: f64::INFINITY,
            area_mm2_max: f64::INFINITY,
            latency_ms_max: f64::INFINITY,
            energy_uj_max: f64::INFINITY,
        }
    }

    fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("mem_params_max", self.mem_params_max),
            ("area_mm2_max", self.area_mm2_max),
            ("latency_ms_max", self.latency_ms_max),
            ("energy_uj_max", self.energy_uj_max),
        ]
    }

    /// Budgets must be non-negative (zero admits nothing) or `+inf`.
    pub fn validate(&self) -> Result<()> {
        for (key, v) in self.values() {
            if v.is_nan() || v < 0.0 {
                return Err(Error::config(format!("constraints.{key}"), "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn memory_ok(&self, params: u64) -> bool {
        params as f64 <= self.mem_params_max
    }

    pub fn satisfied_by(&self, r: &CostReport) -> bool {
        self.memory_ok(r.mem_params)
            && r.area_mm2 <= self.area_mm2_max
            && r.latency_ms <= self.latency_ms_max
            && r.energy_uj <= self.energy_uj_max
    }

    /// Budget minus cost on each axis.
    pub fn margins(&self, r: &CostReport) -> Margins {
        Margins {
            mem_params: self.mem_params_max - r.mem_params as f64,
            area_mm2: self.area_mm2_max - r.area_mm2,
            latency_ms: self.latency_ms_max - r.latency_ms,
            energy_uj: self.energy_uj_max - r.energy_uj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    #[serde(with = "budget")]
    pub mem_params: f64,
    #[serde(with = "budget")]
    pub area_mm2: f64,
    #[serde(with = "budget")]
    pub latency_ms: f64,
    #[serde(with = "budget")]
    pub energy_uj: f64,
}

impl Margins {
    pub fn all_nonnegative(&self) -> bool {
        [self.mem_params, self.area_mm2, self.latency_ms, self.energy_uj]
            .iter()
            .all(|m| *m >= 0.0)
    }
}

/// Everything a candidate evaluation depends on.
#[derive(Debug, Clone)]
pub struct SearchProblem {
    pub constraints: Constraints,
    pub hw: HardwareConfig,
    pub quant: QuantSpec,
    pub lif: LifParams,
    pub beta: BetaRule,
    pub base_channels: usize,
    pub num_classes: usize,
    pub run_seed: u64,
    pub batch: Batch,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchOptions {
    /// Worker threads; 0 picks the machine default.
    pub workers: usize,
    pub trace: bool,
}

/// Weights depend only on the run seed and the candidate's cells, so a
/// candidate scores identically in either phase and in any evaluation order.
pub fn candidate_seed(run_seed: u64, cell_a: CellConfig, cell_b: CellConfig) -> WeightSeed {
    WeightSeed {
        seed: run_seed,
        stream: (cell_a.index() * CELL_COUNT + cell_b.index()) as u64,
    }
}

impl SearchProblem {
    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.hw.validate()?;
        self.quant.validate()?;
        self.lif.validate()?;
        self.beta.validate()?;
        if self.hw.bits_per_cell != self.quant.bit_d {
            return Err(Error::config(
                "hw.bits_per_cell",
                format!(
                    "{} disagrees with quant bit_d {}",
                    self.hw.bits_per_cell, self.quant.bit_d
                ),
            ));
        }
        self.batch.input_shape()?;
        Ok(())
    }

    pub fn build(&self, cell_a: CellConfig, cell_b: CellConfig) -> Result<NetworkArch> {
        build_network(
            cell_a,
            cell_b,
            self.batch.input_shape()?,
            self.base_channels,
            self.num_classes,
        )
    }

    /// Quantized forward pass of one candidate.
    pub fn activity(&self, arch: &NetworkArch) -> Result<ActivityRecord> {
        let seed = candidate_seed(self.run_seed, arch.cell_a, arch.cell_b);
        quantized_activity(arch, &self.quant, &self.batch, &self.lif, seed)
    }

    pub fn costs(&self, arch: &NetworkArch, record: &ActivityRecord) -> Result<CostReport> {
        evaluate_costs(arch, &self.hw, &self.quant, self.lif.timesteps, &record.input_rates)
    }
}

/// Fitness and full cost report of one candidate, with no budget checks.
pub fn score_candidate(
    problem: &SearchProblem,
    cell_a: CellConfig,
    cell_b: CellConfig,
) -> Result<(FitnessScore, CostReport)> {
    let arch = problem.build(cell_a, cell_b)?;
    let record = problem.activity(&arch)?;
    let report = problem.costs(&arch, &record)?;
    Ok((score_activity(&record, &problem.beta)?, report))
}

/// Cost report of one candidate; runs the forward pass for activity but
/// skips the fitness computation.
pub fn cost_candidate(problem: &SearchProblem, cell_a: CellConfig, cell_b: CellConfig) -> Result<CostReport> {
    let arch = problem.build(cell_a, cell_b)?;
    let record = problem.activity(&arch)?;
    problem.costs(&arch, &record)
}

/// Costs known for a candidate at the point it was accepted or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub mem_params: u64,
    pub area_mm2: Option<f64>,
    pub latency_ms: Option<f64>,
    pub energy_uj: Option<f64>,
}

impl CostSummary {
    fn of(r: &CostReport) -> Self {
        Self {
            mem_params: r.mem_params,
            area_mm2: Some(r.area_mm2),
            latency_ms: Some(r.latency_ms),
            energy_uj: Some(r.energy_uj),
        }
    }

    /// Largest cost/budget ratio over the known axes, and its axis.
    fn worst_ratio(&self, c: &Constraints) -> (f64, &'static str) {
        let axes = [
            ("mem_params", Some(self.mem_params as f64), c.mem_params_max),
            ("area_mm2", self.area_mm2, c.area_mm2_max),
            ("latency_ms", self.latency_ms, c.latency_ms_max),
            ("energy_uj", self.energy_uj, c.energy_uj_max),
        ];
        axes.iter()
            .filter_map(|(name, cost, budget)| cost.map(|v| (ratio(v, *budget), *name)))
            .fold((0.0, "none"), |best, cur| if cur.0 > best.0 { cur } else { best })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: u8,
    pub cell_a: CellConfig,
    pub cell_b: CellConfig,
    pub costs: CostSummary,
    pub feasible: bool,
    /// `None` when the candidate was rejected before fitness evaluation.
    pub score: Option<FitnessScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub cell_a: CellConfig,
    pub cell_b: CellConfig,
    pub score: FitnessScore,
    pub report: CostReport,
    pub evaluated_count: usize,
    pub feasible_count: usize,
    /// Best phase-0 score (the Cell-A selection).
    pub phase0_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

/// One evaluated candidate.
struct Evaluated {
    cell_b: CellConfig,
    costs: CostSummary,
    feasible: bool,
    score: Option<FitnessScore>,
    report: Option<CostReport>,
}

fn eval_phase0(p: &SearchProblem, cell: CellConfig) -> Result<Evaluated> {
    let arch = p.build(cell, cell)?;
    let params = arch.param_count();
    let costs = CostSummary {
        mem_params: params,
        area_mm2: None,
        latency_ms: None,
        energy_uj: None,
    };
    if !p.constraints.memory_ok(params) {
        return Ok(Evaluated {
            cell_b: cell,
            costs,
            feasible: false,
            score: None,
            report: None,
        });
    }
    let record = p.activity(&arch)?;
    Ok(Evaluated {
        cell_b: cell,
        costs,
        feasible: true,
        score: Some(score_activity(&record, &p.beta)?),
        report: None,
    })
}

fn eval_phase1(p: &SearchProblem, cell_a: CellConfig, cell_b: CellConfig) -> Result<Evaluated> {
    let c = &p.constraints;
    let arch = p.build(cell_a, cell_b)?;
    let plan = map_network(&arch, &p.hw, &p.quant)?;
    let mut costs = CostSummary {
        mem_params: arch.param_count(),
        area_mm2: Some(area(&plan, &p.hw)),
        latency_ms: Some(latency(&plan, &arch, &p.hw, p.lif.timesteps)),
        energy_uj: None,
    };
    let reject = |costs| Evaluated {
        cell_b,
        costs,
        feasible: false,
        score: None,
        report: None,
    };
    // energy needs a forward pass; skip it when a cheap axis already fails
    if !c.memory_ok(costs.mem_params)
        || costs.area_mm2.unwrap() > c.area_mm2_max
        || costs.latency_ms.unwrap() > c.latency_ms_max
    {
        return Ok(reject(costs));
    }
    let record = p.activity(&arch)?;
    let report = p.costs(&arch, &record)?;
    costs = CostSummary::of(&report);
    if !c.satisfied_by(&report) {
        return Ok(reject(costs));
    }
    Ok(Evaluated {
        cell_b,
        costs,
        feasible: true,
        score: Some(score_activity(&record, &p.beta)?),
        report: Some(report),
    })
}

fn run_phase<F>(workers: usize, eval: F) -> Result<Vec<Evaluated>>
where
    F: Fn(CellConfig) -> Result<Evaluated> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cells: Vec<CellConfig> = enumerate_cells().collect();
    pool.install(|| cells.par_iter().map(|&c| eval(c)).collect())
}

/// Index and score of the strict maximum above `start`, first wins on ties.
fn strict_argmax(evals: &[Evaluated], start: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut score_h = start;
    for (i, e) in evals.iter().enumerate() {
        if let Some(s) = e.score.filter(|s| e.feasible && s.beats(score_h)) {
            score_h = s.value().unwrap();
            best = Some((i, score_h));
        }
    }
    best
}

fn closest_miss(evals: &[Evaluated], cell_a: CellConfig, c: &Constraints) -> String {
    let nearest = evals.iter().map(|e| (e, e.costs.worst_ratio(c))).fold(
        None::<(&Evaluated, (f64, &str))>,
        |best, cur| match best {
            Some(b) if b.1 .0 <= cur.1 .0 => Some(b),
            _ => Some(cur),
        },
    );
    match nearest {
        Some((e, (r, axis))) if r > 1.0 => format!(
            "closest candidate cell_a={cell_a} cell_b={} exceeds its {axis} budget by a factor of {r:.4}",
            e.cell_b
        ),
        Some((e, _)) => format!(
            "candidates fit the budgets but none scored above {INITIAL_BEST} (e.g. cell_a={cell_a} cell_b={})",
            e.cell_b
        ),
        None => "no candidates".into(),
    }
}

pub fn hw_aware_search(problem: &SearchProblem, opts: &SearchOptions) -> Result<SearchResult> {
    problem.validate()?;
    let c = &problem.constraints;

    let phase0 = run_phase(opts.workers, |cell| eval_phase0(problem, cell))?;
    let (w_idx, s0) = strict_argmax(&phase0, INITIAL_BEST).ok_or_else(|| {
        let detail = if phase0.iter().any(|e| e.feasible) {
            format!("no memory-feasible candidate scored above {INITIAL_BEST}")
        } else {
            let smallest = phase0.iter().map(|e| e.costs.mem_params).min().unwrap_or(0);
            format!(
                "smallest candidate has {smallest} parameters, budget is {}",
                c.mem_params_max
            )
        };
        Error::NoFeasible {
            phase: Phase::Memory,
            detail,
        }
    })?;
    let cell_a = phase0[w_idx].cell_b;

    let phase1 = run_phase(opts.workers, |cell_b| eval_phase1(problem, cell_a, cell_b))?;
    // The phase-0 winner stays the incumbent only if it meets every budget;
    // otherwise phase 1 starts from scratch so an infeasible pair can never
    // be returned.
    let tied = &phase1[cell_a.index()];
    let incumbent = tied.feasible.then_some((cell_a.index(), s0));
    let start = incumbent.map_or(INITIAL_BEST, |(_, s)| s);
    let (win_idx, _) = strict_argmax(&phase1, start)
        .or(incumbent)
        .ok_or_else(|| Error::NoFeasible {
            phase: Phase::Hardware,
            detail: closest_miss(&phase1, cell_a, c),
        })?;

    let winner = &phase1[win_idx];
    let feasible_count = phase0.iter().filter(|e| e.feasible).count() + phase1.iter().filter(|e| e.feasible).count();
    let trace = opts.trace.then(|| {
        let entries = |phase: u8, evals: &[Evaluated], fixed: Option<CellConfig>| -> Vec<TraceEntry> {
            evals
                .iter()
                .map(|e| TraceEntry {
                    phase,
                    cell_a: fixed.unwrap_or(e.cell_b),
                    cell_b: e.cell_b,
                    costs: e.costs,
                    feasible: e.feasible,
                    score: e.score,
                })
                .collect()
        };
        let mut t = entries(0, &phase0, None);
        t.extend(entries(1, &phase1, Some(cell_a)));
        t
    });

    Ok(SearchResult {
        cell_a,
        cell_b: winner.cell_b,
        score: winner.score.expect("feasible candidates are scored"),
        report: winner.report.clone().expect("feasible candidates carry a report"),
        evaluated_count: phase0.len() + phase1.len(),
        feasible_count,
        phase0_score: s0,
        trace,
    })
}
