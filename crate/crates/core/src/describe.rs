//! Compact and interpretable descriptions of instance groups as small sets of
//! leaf subspaces, chosen by weighted set cover.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::data::Label;
use crate::error::{invalid, Error, Result};
use crate::iforest::{EnsembleModel, SparseScoreVector, Subspace};
use crate::math;
use crate::rules::{Conjunction, RuleSet};

/// Largest candidate count solved exactly; larger problems fall back to greedy.
pub const EXACT_LIMIT: usize = 25;

/// Box used to give unbounded leaf ranges a finite width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBox {
    bounds: Vec<(f64, f64)>,
}

impl ClipBox {
    /// Widens each `(min, max)` by `margin` of its width per side. A zero-width
    /// dimension gets a fixed half-unit pad so volumes stay positive.
    pub fn from_bounding_box(bbox: &[(f64, f64)], margin: f64) -> Self {
        let bounds = bbox
            .iter()
            .map(|&(lo, hi)| {
                let width = hi - lo;
                let pad = if width > 0.0 { margin * width } else { 0.5 };
                (lo - pad, hi + pad)
            })
            .collect();
        ClipBox { bounds }
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Log volume of `sub` intersected with the clip box.
    pub fn log_volume(&self, sub: &Subspace) -> f64 {
        sub.bounds
            .iter()
            .zip(&self.bounds)
            .map(|(b, &(lo, hi))| {
                let width = b.hi.min(hi) - b.lo.max(lo);
                math::ln(width.max(f64::MIN_POSITIVE))
            })
            .sum()
    }
}

/// All leaf subspaces of a model with clipped log volumes.
#[derive(Debug, Clone)]
pub struct SubspaceCatalog {
    subspaces: Vec<Subspace>,
    log_volumes: Vec<f64>,
}

impl SubspaceCatalog {
    pub fn new(model: &EnsembleModel, clip: &ClipBox) -> Result<Self> {
        if clip.bounds.len() != model.d() {
            return Err(Error::DimensionMismatch { expected: model.d(), found: clip.bounds.len() });
        }
        let subspaces = model.leaf_subspaces();
        let log_volumes = subspaces.iter().map(|s| clip.log_volume(s)).collect();
        Ok(SubspaceCatalog { subspaces, log_volumes })
    }

    pub fn len(&self) -> usize {
        self.subspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subspaces.is_empty()
    }

    pub fn get(&self, leaf: usize) -> &Subspace {
        &self.subspaces[leaf]
    }

    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn log_volume(&self, leaf: usize) -> f64 {
        self.log_volumes[leaf]
    }

    pub fn rule_length(&self, leaf: usize) -> usize {
        self.subspaces[leaf].rule_length()
    }

    /// `w_i * d_i`.
    pub fn relevance(&self, leaf: usize, w: &[f64]) -> f64 {
        w[leaf] * self.subspaces[leaf].score
    }

    /// Rules for a selection of leaves, one conjunction each.
    pub fn rules(&self, leaves: &[usize]) -> RuleSet {
        RuleSet::new(leaves.iter().map(|&l| Conjunction::from_bounds(&self.subspaces[l].bounds)).collect())
    }
}

/// The `delta` most relevant leaves among those containing the instance with
/// score vector `z`, most relevant first; ties go to the lower leaf index.
pub fn top_relevant_subspaces(catalog: &SubspaceCatalog, w: &[f64], z: &SparseScoreVector, delta: usize) -> Result<Vec<usize>> {
    if delta == 0 {
        return Err(invalid("delta must be at least 1"));
    }
    if w.len() != catalog.len() || z.dim() != catalog.len() {
        return Err(Error::DimensionMismatch { expected: catalog.len(), found: z.dim().max(w.len()) });
    }
    let mut ranked: Vec<(usize, f64)> = z.support().map(|l| (l, catalog.relevance(l, w))).collect();
    ranked.sort_by(math::by_score_desc);
    ranked.truncate(delta);
    Ok(ranked.into_iter().map(|r| r.0).collect())
}

/// Weighted set cover: choose columns minimizing total cost so that every row
/// has at least one chosen column.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverProblem {
    /// Columns covering each row.
    pub rows: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
    /// Tie-break keys: rule length, then leaf index, per column.
    pub rule_lengths: Vec<usize>,
    pub leaves: Vec<usize>,
}

impl CoverProblem {
    /// Problem with plain column indices as leaf ids and zero rule lengths.
    pub fn from_costs(rows: Vec<Vec<usize>>, costs: Vec<f64>) -> Self {
        let k = costs.len();
        CoverProblem { rows, costs, rule_lengths: vec![0; k], leaves: (0..k).collect() }
    }

    pub fn columns(&self) -> usize {
        self.costs.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.costs.len();
        if self.rule_lengths.len() != k || self.leaves.len() != k {
            return Err(invalid("cover problem column metadata has inconsistent lengths"));
        }
        if self.costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(invalid("cover costs must be finite and non-negative"));
        }
        for (r, cols) in self.rows.iter().enumerate() {
            if cols.is_empty() {
                return Err(Error::Infeasible { instance: r });
            }
            if cols.iter().any(|&c| c >= k) {
                return Err(invalid("cover row references a missing column"));
            }
        }
        Ok(())
    }

    pub fn is_cover(&self, selected: &[usize]) -> bool {
        self.rows.iter().all(|cols| cols.iter().any(|c| selected.contains(c)))
    }

    pub fn cost_of(&self, selected: &[usize]) -> f64 {
        selected.iter().map(|&c| self.costs[c]).sum()
    }

    fn key(&self, selected: &[usize]) -> (usize, usize, Vec<usize>) {
        let mut leaves: Vec<usize> = selected.iter().map(|&c| self.leaves[c]).collect();
        leaves.sort_unstable();
        (selected.len(), selected.iter().map(|&c| self.rule_lengths[c]).sum(), leaves)
    }

    /// Ordering of two feasible selections: cost, then the tie-break keys.
    pub fn compare(&self, a: &[usize], b: &[usize]) -> Ordering {
        let (ca, cb) = (self.cost_of(a), self.cost_of(b));
        if !approx_eq(ca, cb) {
            return ca.partial_cmp(&cb).unwrap_or(Ordering::Equal);
        }
        self.key(a).cmp(&self.key(b))
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverSolution {
    /// Chosen columns, ascending.
    pub selected: Vec<usize>,
    pub cost: f64,
    /// `false` when produced by the greedy heuristic.
    pub exact: bool,
}

/// Exact below [`EXACT_LIMIT`] columns, greedy above.
pub fn solve_set_cover(problem: &CoverProblem) -> Result<CoverSolution> {
    if problem.columns() <= EXACT_LIMIT {
        solve_exact(problem)
    } else {
        solve_greedy(problem)
    }
}

struct Search<'a> {
    p: &'a CoverProblem,
    col_rows: Vec<Vec<usize>>,
    best: Option<Vec<usize>>,
    best_cost: f64,
}

impl Search<'_> {
    fn recurse(&mut self, chosen: &mut Vec<usize>, covered: &mut [u32], forbidden: &mut [bool], cost: f64) {
        // Branch on the uncovered row with the fewest usable columns.
        let mut pick: Option<(usize, usize)> = None;
        let mut bound = cost;
        for (r, cols) in self.p.rows.iter().enumerate() {
            if covered[r] > 0 {
                continue;
            }
            let mut avail = 0;
            let mut cheapest = f64::INFINITY;
            for &c in cols {
                if !forbidden[c] {
                    avail += 1;
                    cheapest = cheapest.min(self.p.costs[c]);
                }
            }
            if avail == 0 {
                return;
            }
            bound = bound.max(cost + cheapest);
            if pick.is_none_or(|(_, a)| avail < a) {
                pick = Some((r, avail));
            }
        }
        let Some((row, _)) = pick else {
            let better = match &self.best {
                None => true,
                Some(b) => self.p.compare(chosen, b) == Ordering::Less,
            };
            if better {
                let mut sel = chosen.clone();
                sel.sort_unstable();
                self.best_cost = self.p.cost_of(&sel);
                self.best = Some(sel);
            }
            return;
        };
        if self.best.is_some() && bound > self.best_cost && !approx_eq(bound, self.best_cost) {
            return;
        }
        let mut cols: Vec<usize> = self.p.rows[row].iter().copied().filter(|&c| !forbidden[c]).collect();
        cols.sort_by(|&a, &b| self.p.costs[a].total_cmp(&self.p.costs[b]).then(a.cmp(&b)));
        let mut newly_forbidden = Vec::new();
        for c in cols {
            chosen.push(c);
            for &r in &self.col_rows[c] {
                covered[r] += 1;
            }
            self.recurse(chosen, covered, forbidden, cost + self.p.costs[c]);
            for &r in &self.col_rows[c] {
                covered[r] -= 1;
            }
            chosen.pop();
            // Later branches exclude c: every cover containing c was seen.
            forbidden[c] = true;
            newly_forbidden.push(c);
        }
        for c in newly_forbidden {
            forbidden[c] = false;
        }
    }
}

fn column_rows(p: &CoverProblem) -> Vec<Vec<usize>> {
    let mut col_rows = vec![Vec::new(); p.columns()];
    for (r, cols) in p.rows.iter().enumerate() {
        for &c in cols {
            if !col_rows[c].contains(&r) {
                col_rows[c].push(r);
            }
        }
    }
    col_rows
}

/// Depth-first branch-and-bound over rows, branching on the most constrained
/// uncovered row.
pub fn solve_exact(problem: &CoverProblem) -> Result<CoverSolution> {
    problem.validate()?;
    let mut search = Search { p: problem, col_rows: column_rows(problem), best: None, best_cost: f64::INFINITY };
    let mut covered = vec![0u32; problem.rows.len()];
    let mut forbidden = vec![false; problem.columns()];
    search.recurse(&mut Vec::new(), &mut covered, &mut forbidden, 0.0);
    let selected = search.best.ok_or(Error::Infeasible { instance: 0 })?;
    Ok(CoverSolution { cost: problem.cost_of(&selected), selected, exact: true })
}

/// Repeatedly takes the column with the lowest cost per newly covered row,
/// then drops columns made redundant by later picks.
pub fn solve_greedy(problem: &CoverProblem) -> Result<CoverSolution> {
    problem.validate()?;
    let col_rows = column_rows(problem);
    let mut covered = vec![false; problem.rows.len()];
    let mut remaining = problem.rows.len();
    let mut selected: Vec<usize> = Vec::new();
    while remaining > 0 {
        let mut best: Option<(usize, f64)> = None;
        for (c, rows) in col_rows.iter().enumerate() {
            let gain = rows.iter().filter(|&&r| !covered[r]).count();
            if gain == 0 {
                continue;
            }
            let ratio = problem.costs[c] / gain as f64;
            if best.is_none_or(|(_, b)| ratio < b) {
                best = Some((c, ratio));
            }
        }
        let (c, _) = best.expect("validated problems stay coverable");
        for &r in &col_rows[c] {
            if !covered[r] {
                covered[r] = true;
                remaining -= 1;
            }
        }
        selected.push(c);
    }
    for i in (0..selected.len()).rev() {
        let c = selected[i];
        let others: Vec<usize> = selected.iter().copied().filter(|&o| o != c).collect();
        if problem.is_cover(&others) {
            selected = others;
        }
    }
    selected.sort_unstable();
    Ok(CoverSolution { cost: problem.cost_of(&selected), selected, exact: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Description {
    /// Selected leaf indices, ascending.
    pub subspaces: Vec<usize>,
    pub rules: RuleSet,
    pub exact: bool,
}

struct Candidates {
    leaves: Vec<usize>,
    rows: Vec<Vec<usize>>,
}

fn gather_candidates(catalog: &SubspaceCatalog, w: &[f64], zs: &[&SparseScoreVector], delta: usize) -> Result<Candidates> {
    let mut leaves: Vec<usize> = Vec::new();
    let mut tops = Vec::with_capacity(zs.len());
    for z in zs {
        let top = top_relevant_subspaces(catalog, w, z, delta)?;
        leaves.extend_from_slice(&top);
        tops.push(top);
    }
    leaves.sort_unstable();
    leaves.dedup();
    let rows = tops
        .iter()
        .map(|top| {
            let mut cols: Vec<usize> = top.iter().map(|l| leaves.binary_search(l).expect("candidate present")).collect();
            cols.sort_unstable();
            cols
        })
        .collect();
    Ok(Candidates { leaves, rows })
}

fn solve_over(catalog: &SubspaceCatalog, cands: &Candidates, costs: Vec<f64>) -> Result<Description> {
    let problem = CoverProblem {
        rows: cands.rows.clone(),
        costs,
        rule_lengths: cands.leaves.iter().map(|&l| catalog.rule_length(l)).collect(),
        leaves: cands.leaves.clone(),
    };
    let sol = solve_set_cover(&problem)?;
    let subspaces: Vec<usize> = sol.selected.iter().map(|&c| cands.leaves[c]).collect();
    Ok(Description { rules: catalog.rules(&subspaces), subspaces, exact: sol.exact })
}

/// Minimum-volume set of relevant subspaces covering every instance in `zs`.
///
/// Volumes are rescaled by a common factor (the largest candidate volume) so
/// high-dimensional boxes do not underflow; the minimizer is unchanged.
pub fn compact_description(catalog: &SubspaceCatalog, w: &[f64], zs: &[&SparseScoreVector], delta: usize) -> Result<Description> {
    if zs.is_empty() {
        return Err(Error::Empty("no instances to describe"));
    }
    let cands = gather_candidates(catalog, w, zs, delta)?;
    let max_log = cands.leaves.iter().map(|&l| catalog.log_volume(l)).fold(f64::NEG_INFINITY, f64::max);
    let costs = cands.leaves.iter().map(|&l| math::exp(catalog.log_volume(l) - max_log)).collect();
    solve_over(catalog, &cands, costs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpretParams {
    /// Pseudo-nominals sampled from the unlabeled pool; `None` is `min(256, pool)`.
    pub sample_size: Option<usize>,
    pub precision_threshold: f64,
    /// Multiplier on the rule-length complexity term.
    pub complexity_weight: f64,
    pub delta: usize,
}

impl Default for InterpretParams {
    fn default() -> Self {
        InterpretParams { sample_size: None, precision_threshold: 0.4, complexity_weight: 1.0, delta: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptionStatus {
    Ok,
    /// Every selected subspace fell below the precision threshold.
    AllFiltered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretableDescription {
    /// Surviving leaves, ascending.
    pub subspaces: Vec<usize>,
    pub precisions: Vec<f64>,
    pub rules: RuleSet,
    pub status: DescriptionStatus,
    pub exact: bool,
}

/// Rules describing the labeled anomalies, penalizing subspaces that contain
/// nominals (labeled or sampled from `pool`) and subspaces with long rules.
///
/// Costs use unscaled clipped volumes so the volume and complexity terms stay
/// in fixed proportion, unless volumes leave the representable range.
pub fn interpretable_description<R: Rng + ?Sized>(
    catalog: &SubspaceCatalog,
    w: &[f64],
    labeled: &[(&SparseScoreVector, Label)],
    pool: &[&SparseScoreVector],
    params: &InterpretParams,
    rng: &mut R,
) -> Result<InterpretableDescription> {
    if !(0.0..=1.0).contains(&params.precision_threshold) {
        return Err(invalid("precision threshold must lie in [0, 1]"));
    }
    let anomalies: Vec<&SparseScoreVector> = labeled.iter().filter(|(_, y)| y.is_anomaly()).map(|(z, _)| *z).collect();
    if anomalies.is_empty() {
        return Err(Error::Empty("no labeled anomalies to describe"));
    }
    let u = params.sample_size.unwrap_or(256).min(pool.len());
    let sampled: Vec<&SparseScoreVector> = index::sample(rng, pool.len(), u).into_iter().map(|i| pool[i]).collect();
    let nominals: Vec<&SparseScoreVector> =
        labeled.iter().filter(|(_, y)| !y.is_anomaly()).map(|(z, _)| *z).chain(sampled).collect();

    let cands = gather_candidates(catalog, w, &anomalies, params.delta)?;
    let count_in = |set: &[&SparseScoreVector], leaf: usize| set.iter().filter(|z| z.contains_leaf(leaf)).count();
    let etas: Vec<usize> = cands.leaves.iter().map(|&l| count_in(&nominals, l)).collect();

    let logs: Vec<f64> = cands.leaves.iter().map(|&l| catalog.log_volume(l)).collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if !(-700.0..=700.0).contains(&max_log) { max_log } else { 0.0 };
    let costs = cands
        .leaves
        .iter()
        .zip(&logs)
        .zip(&etas)
        .map(|((&l, &lv), &eta)| {
            let complexity = math::exp((catalog.rule_length(l) as f64 - 1.0) * core::f64::consts::LN_2);
            math::exp(lv - shift) * (1.0 + eta as f64) + params.complexity_weight * complexity
        })
        .collect();
    let desc = solve_over(catalog, &cands, costs)?;

    let mut subspaces = Vec::new();
    let mut precisions = Vec::new();
    for &leaf in &desc.subspaces {
        let pos = count_in(&anomalies, leaf);
        let neg = count_in(&nominals, leaf);
        let precision = pos as f64 / (pos + neg) as f64;
        if precision >= params.precision_threshold {
            subspaces.push(leaf);
            precisions.push(precision);
        }
    }
    let status = if subspaces.is_empty() { DescriptionStatus::AllFiltered } else { DescriptionStatus::Ok };
    Ok(InterpretableDescription { rules: catalog.rules(&subspaces), subspaces, precisions, status, exact: desc.exact })
}
