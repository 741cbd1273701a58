use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::types::{residual_of_vector, residual_unchecked, to_vector, AffineMotionModel, LabelId, Labeling, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    pub lambda_p: f64,
    pub lambda_m: f64,
    pub tau_d: f64,
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_P", self.lambda_p),
            ("lambda_M", self.lambda_m),
            ("tau_D", self.tau_d),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn data_cost(&self, r: f64) -> f64 {
        (r * r).min(self.tau_d * self.tau_d)
    }
}

/// Weighted terms of the labeling energy; `smoothness` and `label_cost`
/// already include their λ factors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub smoothness: f64,
    pub label_cost: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(data: f64, smoothness: f64, label_cost: f64) -> Self {
        Self {
            data,
            smoothness,
            label_cost,
            total: data + smoothness + label_cost,
        }
    }
}

fn check_dims(labeling: &Labeling, graph: &SpatialGraph, window: &Window) -> Result<()> {
    if labeling.len() != window.len() || graph.node_count() != window.len() {
        return Err(Error::DimensionMismatch(labeling.len(), 1, window.len(), graph.node_count()));
    }
    Ok(())
}

pub(crate) fn smoothness_cost(assignment: &[LabelId], graph: &SpatialGraph, lambda_p: f64) -> f64 {
    lambda_p
        * graph
            .edges()
            .iter()
            .filter(|e| assignment[e.i] != assignment[e.j])
            .map(|e| e.w)
            .sum::<f64>()
}

/// Total energy of `labeling` on `window`.
pub fn energy(
    labeling: &Labeling,
    models: &BTreeMap<LabelId, AffineMotionModel>,
    graph: &SpatialGraph,
    window: &Window,
    params: &EnergyParams,
) -> Result<EnergyBreakdown> {
    check_dims(labeling, graph, window)?;
    for l in labeling.active_labels() {
        if !models.contains_key(l) {
            return Err(Error::MissingModel(*l));
        }
    }
    let data = window
        .observations
        .iter()
        .zip(labeling.assignment())
        .map(|(o, l)| params.data_cost(residual_unchecked(&models[l], o)))
        .sum();
    let smoothness = smoothness_cost(labeling.assignment(), graph, params.lambda_p);
    let label_cost = params.lambda_m * labeling.active_labels().len() as f64;
    Ok(EnergyBreakdown::new(data, smoothness, label_cost))
}

/// Truncated data costs for every (observation, label) pair.
#[derive(Debug, Clone)]
pub struct DataCosts {
    labels: Vec<LabelId>,
    /// Row-major, one row per observation.
    costs: Vec<f64>,
}

impl DataCosts {
    pub fn new(
        window: &Window,
        models: &BTreeMap<LabelId, AffineMotionModel>,
        labels: impl IntoIterator<Item = LabelId>,
        params: &EnergyParams,
    ) -> Result<Self> {
        let mut labels: Vec<LabelId> = labels.into_iter().collect();
        labels.sort_unstable();
        labels.dedup();
        let ms = labels
            .iter()
            .map(|l| models.get(l).map(to_vector).ok_or(Error::MissingModel(*l)))
            .collect::<Result<Vec<_>>>()?;
        let mut costs = Vec::with_capacity(window.len() * labels.len());
        for o in &window.observations {
            costs.extend(ms.iter().map(|m| params.data_cost(residual_of_vector(m, o))));
        }
        Ok(Self { labels, costs })
    }

    /// Costs given directly; `costs` is row-major with one row per node
    /// and columns in the order of `labels`, which must be strictly increasing.
    pub fn from_table(labels: Vec<LabelId>, costs: Vec<f64>) -> Self {
        assert!(labels.windows(2).all(|w| w[0] < w[1]), "labels must be strictly increasing");
        assert!(!labels.is_empty() && costs.len() % labels.len() == 0);
        Self { labels, costs }
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn column(&self, label: LabelId) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    #[inline]
    pub fn cost(&self, node: usize, column: usize) -> f64 {
        self.costs[node * self.labels.len() + column]
    }

    #[inline]
    pub fn cost_of(&self, node: usize, label: LabelId) -> f64 {
        self.cost(node, self.column(label).expect("label has cached costs"))
    }

    /// Energy of an assignment whose labels all have cached costs.
    pub fn energy(&self, assignment: &[LabelId], graph: &SpatialGraph, params: &EnergyParams) -> EnergyBreakdown {
        let mut data = 0.0;
        let mut used = vec![false; self.labels.len()];
        for (i, &l) in assignment.iter().enumerate() {
            let c = self.column(l).expect("label has cached costs");
            used[c] = true;
            data += self.cost(i, c);
        }
        let active = used.iter().filter(|&&u| u).count();
        EnergyBreakdown::new(
            data,
            smoothness_cost(assignment, graph, params.lambda_p),
            params.lambda_m * active as f64,
        )
    }
}

/// CSV dump `sweep,data,smoothness,label_cost,total`.
pub fn write_energy_trace(out: &mut impl Write, trace: &[EnergyBreakdown]) -> std::io::Result<()> {
    writeln!(out, "sweep,data,smoothness,label_cost,total")?;
    for (k, e) in trace.iter().enumerate() {
        writeln!(out, "{k},{},{},{},{}", e.data, e.smoothness, e.label_cost, e.total)?;
    }
    Ok(())
}
