use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::RunReport;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: u32,
    pub total: u32,
}

impl Tally {
    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += hit as u32;
    }

    pub fn merge(&mut self, other: Tally) {
        self.hits += other.hits;
        self.total += other.total;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.total == 0 {
            return f.pad("-");
        }
        // percent rounded half up, in integers
        let pct = (200 * self.hits as u64 + self.total as u64) / (2 * self.total as u64);
        f.pad(&format!("{}/{} ({pct}%)", self.hits, self.total))
    }
}

/// Confusion cells for hazard trials. Rows are ground truth, columns the
/// agent's prompt decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardCounts {
    pub tp: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub tn: u32,
}

impl HazardCounts {
    pub fn single(truth: bool, prompted: bool) -> Self {
        let mut c = HazardCounts::default();
        match (truth, prompted) {
            (true, true) => c.tp = 1,
            (true, false) => c.fn_ = 1,
            (false, true) => c.fp = 1,
            (false, false) => c.tn = 1,
        }
        c
    }

    pub fn merge(&mut self, other: HazardCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u32 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub name: String,
    pub runs: u32,
    pub skipped: u32,
    pub success: Tally,
    pub expectations: Tally,
    pub detection: Tally,
    pub recovery: Tally,
    pub hazard: HazardCounts,
}

impl ScenarioRow {
    fn add(&mut self, r: &RunReport) {
        self.runs += 1;
        if r.skipped.is_some() {
            self.skipped += 1;
            return;
        }
        self.success.add(r.success);
        self.expectations.add(r.expectation_failures.is_empty());
        if let Some(d) = r.detected_kidnap {
            self.detection.add(d);
        }
        if let Some(rec) = r.recovered {
            self.recovery.add(rec);
        }
        if let Some(h) = r.hazard_confusion {
            self.hazard.merge(h);
        }
    }

    fn merge(&mut self, o: &ScenarioRow) {
        self.runs += o.runs;
        self.skipped += o.skipped;
        self.success.merge(o.success);
        self.expectations.merge(o.expectations);
        self.detection.merge(o.detection);
        self.recovery.merge(o.recovery);
        self.hazard.merge(o.hazard);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenarios: Vec<ScenarioRow>,
    pub total: ScenarioRow,
    /// `(scenario, reason)` for every skipped run, deduplicated.
    pub skipped: Vec<(String, String)>,
}

/// Aggregate run reports into a text table and a structured summary. The
/// result does not depend on the order of `reports`.
pub fn report_metrics(reports: &[RunReport]) -> (String, Metrics) {
    let mut rows: BTreeMap<&str, ScenarioRow> = BTreeMap::new();
    let mut skipped = std::collections::BTreeSet::new();
    for r in reports {
        let row = rows.entry(&r.name).or_insert_with(|| ScenarioRow {
            name: r.name.clone(),
            ..ScenarioRow::default()
        });
        row.add(r);
        if let Some(why) = &r.skipped {
            skipped.insert((r.name.clone(), why.clone()));
        }
    }
    let mut total = ScenarioRow {
        name: "all".into(),
        ..ScenarioRow::default()
    };
    for row in rows.values() {
        total.merge(row);
    }
    let metrics = Metrics {
        scenarios: rows.into_values().collect(),
        total,
        skipped: skipped.into_iter().collect(),
    };
    (render(&metrics), metrics)
}

fn render(m: &Metrics) -> String {
    let mut s = String::new();
    let width = m.scenarios.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
    let all = m.scenarios.iter().chain(std::iter::once(&m.total));

    writeln!(s, "Navigation").unwrap();
    writeln!(
        s,
        "{:width$}  {:>5}  {:>16}  {:>16}",
        "scenario", "runs", "success", "expectations"
    )
    .unwrap();
    for r in all.clone() {
        writeln!(
            s,
            "{:width$}  {:>5}  {:>16}  {:>16}",
            r.name, r.runs, r.success, r.expectations
        )
        .unwrap();
    }

    if m.total.detection.total > 0 {
        writeln!(s, "\nLocalization").unwrap();
        writeln!(s, "{:width$}  {:>16}  {:>16}", "scenario", "detection", "recovery").unwrap();
        for r in all.filter(|r| r.detection.total > 0) {
            writeln!(s, "{:width$}  {:>16}  {:>16}", r.name, r.detection, r.recovery).unwrap();
        }
    }

    let h = m.total.hazard;
    if h.total() > 0 {
        writeln!(s, "\nHazard detection   predicted hazard  predicted clear").unwrap();
        writeln!(s, "hazard present     TP {:>13}  FN {:>12}", h.tp, h.fn_).unwrap();
        writeln!(s, "no hazard          FP {:>13}  TN {:>12}", h.fp, h.tn).unwrap();
    }

    for (name, why) in &m.skipped {
        writeln!(s, "skipped {name}: {why}").unwrap();
    }
    s
}
