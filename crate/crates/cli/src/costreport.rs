use std::io::Write;

use ptd_core::cluster::{run_ptd, Cluster, ExecMode};
use ptd_core::costmodel::{estimate_cc, select_levels, spearman, LevelChoice, QueryWorkload};
use ptd_core::index::SummaryLevel;
use ptd_core::QueryPoint;
use serde::{Deserialize, Serialize};

use crate::commands::Workspace;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub choice: String,
    pub partition: u32,
    pub level: String,
    #[serde(rename = "est_C_l")]
    pub est_c: f64,
    #[serde(rename = "act_C_l")]
    pub act_c: f64,
    pub est_scand: f64,
    pub act_scand: f64,
    pub selected: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceCost {
    pub label: String,
    pub levels: Vec<SummaryLevel>,
    pub est_cc: f64,
    /// Mean (instance, entry) emissions per query, summed over partitions.
    pub act_cc: f64,
    pub act_bytes: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub k: usize,
    pub queries: usize,
    pub rows: Vec<CostRow>,
    pub choices: Vec<ChoiceCost>,
    pub selected: Vec<SummaryLevel>,
    /// Rank correlation of estimated and actual CC across `choices`.
    pub spearman: f64,
}

impl CostReport {
    pub fn selected_cost(&self) -> &ChoiceCost {
        self.choices
            .iter()
            .find(|c| c.selected)
            .expect("the selected choice is always measured")
    }

    pub fn best_actual(&self) -> &ChoiceCost {
        self.choices
            .iter()
            .min_by(|a, b| a.act_cc.total_cmp(&b.act_cc))
            .expect("at least one choice")
    }

    pub fn write_csv(&self, w: impl Write) -> CliResult<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|source| CliError::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }
}

fn label(levels: &[SummaryLevel]) -> String {
    if levels.windows(2).all(|w| w[0] == w[1]) {
        format!("uniform:{}", levels[0])
    } else {
        levels
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Estimated against measured communication for every level shared by all
/// trees, plus the per-partition choice of the cost model. The same query
/// points serve as the estimation workload and as the measured queries.
pub fn cost_report(ws: &Workspace, k: usize, queries: &[QueryPoint]) -> CliResult<CostReport> {
    let workload = QueryWorkload::from_log(queries.to_vec())?;
    let n = ws.partitions.len();
    let min_height = ws
        .partitions
        .iter()
        .map(|p| p.tree.height)
        .min()
        .unwrap_or(0);
    let mut choices: Vec<LevelChoice> = std::iter::once(SummaryLevel::Objects)
        .chain((0..min_height as u16).map(SummaryLevel::Node))
        .filter(|l| ws.partitions.iter().all(|p| p.tree.has_level(*l)))
        .map(|l| LevelChoice::uniform(l, n))
        .collect();
    let selected = select_levels(&ws.partitions, k, &workload)?;
    if !choices.contains(&selected) {
        choices.push(selected.clone());
    }

    let mut rows = Vec::new();
    let mut costs = Vec::new();
    for choice in &choices {
        let est = estimate_cc(&ws.partitions, choice, k, &workload)?;
        let cluster = Cluster::new(ws.partitions.clone(), &choice.0)?;
        let mut act_c = vec![0.0; n];
        let mut act_scand = vec![0.0; n];
        let mut bytes = 0.0;
        for q in queries {
            let r = run_ptd(&cluster, q, k, ExecMode::Threaded)?;
            for l in 0..n {
                act_c[l] += r.metrics.emissions_to[l] as f64;
                act_scand[l] += r.metrics.candidates[l] as f64;
            }
            bytes += r.metrics.comm_bytes as f64;
        }
        let nq = queries.len() as f64;
        let is_selected = *choice == selected;
        let name = label(&choice.0);
        for l in 0..n {
            rows.push(CostRow {
                choice: name.clone(),
                partition: l as u32,
                level: choice.0[l].to_string(),
                est_c: est.per_partition[l],
                act_c: act_c[l] / nq,
                est_scand: est.scand[l],
                act_scand: act_scand[l] / nq,
                selected: is_selected as u8,
            });
        }
        costs.push(ChoiceCost {
            label: name,
            levels: choice.0.clone(),
            est_cc: est.cc,
            act_cc: act_c.iter().sum::<f64>() / nq,
            act_bytes: bytes / nq,
            selected: is_selected,
        });
    }
    let est: Vec<f64> = costs.iter().map(|c| c.est_cc).collect();
    let act: Vec<f64> = costs.iter().map(|c| c.act_cc).collect();
    Ok(CostReport {
        k,
        queries: queries.len(),
        rows,
        spearman: spearman(&est, &act),
        choices: costs,
        selected: selected.0,
    })
}
