//! Declarative scenarios and the harness that runs them.
//!
//! A scenario file names a map, a start pose, a script of user utterances
//! and optional faults, objects and expectations. [`run_scenario`] wires a
//! gateway, an agent and a simulated world together, plays the script and
//! returns a [`RunReport`] whose transcript is a pure function of the scenario
//! and the seed.

mod driver;
mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentDeps, AgentError, AgentEvent, AgentNote, AgentOutput, Phase, SessionPrefs};
use crate::embed::{fnv1a64, StubEmbedder};
use crate::gateway::{Ablations, Confusion, Gateway, MockGateway, RemoteConfig, RemoteGateway};
use crate::map::{Heading, MapError, NodeId, TopoMap};
use crate::planner::Route;
use crate::simulator::{build_environment_store, Appearance, FaultSpec, Pose, SimError, SimWorld, WorldObject};
use crate::vector_store::{StoreError, StoreKind, VectorStore};

pub use driver::{Driver, EntryBody, HazardReply, SimEntry, TranscriptEntry};
pub use metrics::{report_metrics, HazardCounts, Metrics, ScenarioRow, Tally};

pub const DEFAULT_MAX_EVENTS: usize = 500;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid scenario {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("scenario `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("no scenario files in {0}")]
    EmptySuite(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreSource {
    Generate {
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    Path(PathBuf),
}

impl Default for StoreSource {
    fn default() -> Self {
        StoreSource::Generate { sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewaySpec {
    Mock {
        #[serde(default)]
        confusion: Option<Confusion>,
    },
    Remote {},
}

impl Default for GatewaySpec {
    fn default() -> Self {
        GatewaySpec::Mock { confusion: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    /// Number of agent events handled before this line is spoken.
    #[serde(default)]
    pub at: usize,
    pub say: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default)]
    pub goal_node: Option<NodeId>,
    #[serde(default)]
    pub success: Option<bool>,
    #[serde(default)]
    pub should_detect_kidnap: Option<bool>,
    #[serde(default)]
    pub should_recover: Option<bool>,
    #[serde(default)]
    pub hazard_ground_truth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Map file, relative to the scenario file.
    pub map: PathBuf,
    #[serde(default)]
    pub store: StoreSource,
    pub start: Pose,
    pub script: Vec<ScriptLine>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub objects: Vec<WorldObject>,
    #[serde(default)]
    pub aliases: BTreeMap<NodeId, NodeId>,
    #[serde(default)]
    pub prefs: SessionPrefs,
    #[serde(default)]
    pub gateway: GatewaySpec,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub on_hazard: HazardReply,
    #[serde(default)]
    pub expected: Option<Expected>,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_max_events() -> usize {
    DEFAULT_MAX_EVENTS
}

impl ScenarioSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn map_path(&self) -> PathBuf {
        self.base_dir.join(&self.map)
    }

    pub fn load_map(&self) -> Result<TopoMap, ScenarioError> {
        Ok(TopoMap::load(self.map_path())?)
    }

    /// Replace any noise fault with `sigma`.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.faults.retain(|f| !matches!(f, FaultSpec::NoiseSigma { .. }));
        self.faults.push(FaultSpec::NoiseSigma { sigma });
        self
    }

    pub fn kidnap(&self) -> Option<(u32, &NodeId, Heading)> {
        self.faults.iter().find_map(|f| match f {
            FaultSpec::Kidnap {
                trigger_leg,
                teleport_to,
                new_heading,
            } => Some((*trigger_leg, teleport_to, *new_heading)),
            _ => None,
        })
    }

    /// Ground truth for the hazard trial, if this scenario is one.
    pub fn hazard_truth(&self) -> Option<bool> {
        let from_expected = self.expected.as_ref().and_then(|e| e.hazard_ground_truth);
        from_expected.or_else(|| (!self.objects.is_empty()).then(|| self.objects.iter().any(|o| o.hazard_ground_truth)))
    }

    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    /// Check every node reference against `map`.
    pub fn validate(&self, map: &TopoMap) -> Result<(), ScenarioError> {
        if self.script.is_empty() {
            return Err(self.invalid("script is empty"));
        }
        if self.script.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(self.invalid("script lines must be in event order"));
        }
        let mut refs: Vec<&NodeId> = vec![&self.start.node];
        for f in &self.faults {
            match f {
                FaultSpec::Kidnap { teleport_to, .. } => refs.push(teleport_to),
                FaultSpec::NoiseSigma { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                    return Err(self.invalid(format!("bad noise sigma {sigma}")));
                }
                _ => {}
            }
        }
        for o in &self.objects {
            if map.edge(&o.at_edge.0, &o.at_edge.1).is_none() {
                return Err(self.invalid(format!(
                    "object {} on missing edge {}->{}",
                    o.label, o.at_edge.0, o.at_edge.1
                )));
            }
        }
        refs.extend(self.aliases.iter().flat_map(|(a, b)| [a, b]));
        if let Some(g) = self.expected.as_ref().and_then(|e| e.goal_node.as_ref()) {
            refs.push(g);
        }
        if let Some(n) = refs.into_iter().find(|n| !map.contains(n)) {
            return Err(self.invalid(format!("node `{n}` is not on the map")));
        }
        self.prefs.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub skipped: Option<String>,
    pub success: bool,
    pub reason: String,
    pub detected_kidnap: Option<bool>,
    pub recovered: Option<bool>,
    pub hazard_confusion: Option<HazardCounts>,
    pub route_length: f64,
    /// Every route the agent adopted, in order.
    pub routes: Vec<Route>,
    /// Walking speed after each preference change.
    pub speeds: Vec<f64>,
    pub expectation_failures: Vec<String>,
    pub transcript: Vec<TranscriptEntry>,
}

impl RunReport {
    fn skipped(spec: &ScenarioSpec, seed: u64, reason: String) -> Self {
        RunReport {
            name: spec.name.clone(),
            seed,
            skipped: Some(reason.clone()),
            success: false,
            reason,
            detected_kidnap: None,
            recovered: None,
            hazard_confusion: None,
            route_length: 0.0,
            routes: Vec::new(),
            speeds: Vec::new(),
            expectation_failures: Vec::new(),
            transcript: Vec::new(),
        }
    }

    /// Every expectation held and the run was not skipped.
    pub fn passed(&self) -> bool {
        self.skipped.is_none() && self.expectation_failures.is_empty()
    }

    /// One JSON object per line.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.transcript {
            out.push_str(&serde_json::to_string(e).expect("transcript serializes"));
            out.push('\n');
        }
        out
    }
}

/// Per-scenario stream seed: FNV-1a over the scenario name, then the
/// little-endian bytes of `salt` and `seed`.
pub fn stream_seed(name: &str, salt: u64, seed: u64) -> u64 {
    let mut bytes = name.as_bytes().to_vec();
    bytes.extend_from_slice(&salt.to_le_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());
    fnv1a64(&bytes)
}

/// Gateway for a scenario, or the reason the run has to be skipped.
pub fn build_gateway(spec: &ScenarioSpec, seed: u64) -> Result<Box<dyn Gateway>, String> {
    match &spec.gateway {
        GatewaySpec::Mock { .. } if spec.ablations.no_system_prompt => {
            Err("system-prompt ablation needs the remote gateway".into())
        }
        GatewaySpec::Mock { confusion: None } => Ok(Box::new(MockGateway::new())),
        GatewaySpec::Mock { confusion: Some(c) } => Ok(Box::new(MockGateway::with_confusion(Confusion {
            seed: stream_seed(&spec.name, c.seed, seed),
            ..*c
        }))),
        GatewaySpec::Remote {} => {
            let config = RemoteConfig::from_env().map_err(|e| e.to_string())?;
            let gw = RemoteGateway::new(config).map_err(|e| e.to_string())?;
            Ok(Box::new(gw.with_ablations(spec.ablations)))
        }
    }
}

pub fn environment_store(spec: &ScenarioSpec, map: &TopoMap) -> Result<VectorStore, ScenarioError> {
    let appearance = Appearance {
        aliases: spec.aliases.clone(),
    };
    match &spec.store {
        StoreSource::Generate { sigma, seed } => Ok(build_environment_store(
            map,
            &StubEmbedder::default(),
            &appearance,
            *sigma,
            *seed,
        )),
        StoreSource::Path(p) => Ok(VectorStore::load(spec.base_dir.join(p), StoreKind::Environment)?),
    }
}

/// Agent and world for a scenario, ready to drive.
pub fn prepare(
    spec: &ScenarioSpec,
    seed: u64,
    on_hazard: HazardReply,
) -> Result<Result<Driver, String>, ScenarioError> {
    let map = spec.load_map()?;
    spec.validate(&map)?;
    let gateway = match build_gateway(spec, seed) {
        Ok(g) => g,
        Err(reason) => return Ok(Err(reason)),
    };
    let env = Arc::new(environment_store(spec, &map)?);
    let agent = Agent::new(
        AgentDeps {
            map: map.clone(),
            env_store: env,
            gateway,
            prefs: spec.prefs.clone(),
            ablations: spec.ablations,
        },
        spec.start.node.clone(),
        spec.start.heading,
    )?;
    let world = SimWorld::new(
        map,
        spec.start.clone(),
        spec.objects.clone(),
        spec.faults.clone(),
        stream_seed(&spec.name, 0, seed),
    )?
    .with_appearance(Appearance {
        aliases: spec.aliases.clone(),
    });
    Ok(Ok(Driver::new(agent, world, on_hazard, spec.max_events)))
}

pub fn run_scenario(spec: &ScenarioSpec, seed: u64) -> Result<RunReport, ScenarioError> {
    let mut driver = match prepare(spec, seed, spec.on_hazard)? {
        Ok(d) => d,
        Err(reason) => return Ok(RunReport::skipped(spec, seed, reason)),
    };
    for line in &spec.script {
        driver.run_until(line.at);
        driver.push(AgentEvent::UserUtterance { text: line.say.clone() });
    }
    driver.run();
    Ok(summarize(spec, seed, &driver))
}

fn summarize(spec: &ScenarioSpec, seed: u64, driver: &Driver) -> RunReport {
    let transcript = driver.transcript().to_vec();
    let (success, reason) = match (driver.stopped(), driver.result()) {
        (Some(why), _) => (false, why.to_string()),
        (None, Some((ok, why))) => (*ok, why.clone()),
        (None, None) => {
            let phase = driver.agent().state().phase;
            (phase == Phase::Idle, format!("ended in phase {phase}"))
        }
    };

    let mut routes = Vec::new();
    let mut speeds = Vec::new();
    let mut kidnap_seq = None;
    let mut detected = false;
    let mut relocalized_correctly = false;
    let mut relocalized_wrongly = false;
    let mut prompted = false;
    let mut truth_pose = spec.start.clone();
    for e in &transcript {
        match &e.body {
            EntryBody::Note(AgentNote::RoutePlanned { route } | AgentNote::RouteChanged { route, .. }) => {
                routes.push(route.clone())
            }
            EntryBody::Note(AgentNote::PreferencesChanged { prefs }) => speeds.push(prefs.speed_mps),
            EntryBody::Note(AgentNote::LocalizationError { .. }) if kidnap_seq.is_some() => detected = true,
            EntryBody::Note(AgentNote::Relocalized { node, heading, .. }) if kidnap_seq.is_some() => {
                if node == &truth_pose.node && *heading == truth_pose.heading {
                    relocalized_correctly = true;
                } else {
                    relocalized_wrongly = true;
                }
            }
            EntryBody::Output(AgentOutput::HazardPrompt { .. }) => prompted = true,
            EntryBody::Sim(SimEntry::Turned { node, heading }) => {
                truth_pose = Pose {
                    node: node.clone(),
                    heading: *heading,
                }
            }
            EntryBody::Sim(SimEntry::Moved { to, .. }) => truth_pose.node = to.clone(),
            EntryBody::Sim(SimEntry::Kidnapped { pose }) => {
                kidnap_seq = Some(e.seq);
                truth_pose = pose.clone();
            }
            _ => {}
        }
    }
    let has_kidnap = spec.kidnap().is_some();
    let detected_kidnap = has_kidnap.then_some(detected);
    let recovered = has_kidnap.then_some(detected && relocalized_correctly && !relocalized_wrongly && success);
    let hazard_confusion = spec.hazard_truth().map(|truth| HazardCounts::single(truth, prompted));
    let route_length = driver
        .agent()
        .state()
        .route
        .as_ref()
        .or(routes.last())
        .map_or(0.0, |r| r.total_distance);

    let mut report = RunReport {
        name: spec.name.clone(),
        seed,
        skipped: None,
        success,
        reason,
        detected_kidnap,
        recovered,
        hazard_confusion,
        route_length,
        routes,
        speeds,
        expectation_failures: Vec::new(),
        transcript,
    };
    report.expectation_failures = check_expectations(spec, driver, &report);
    report
}

fn check_expectations(spec: &ScenarioSpec, driver: &Driver, report: &RunReport) -> Vec<String> {
    let Some(exp) = &spec.expected else { return Vec::new() };
    let mut failures = Vec::new();
    if let Some(goal) = &exp.goal_node {
        let at = &driver.world().pose().node;
        if at != goal {
            failures.push(format!("final node: expected {goal}, got {at}"));
        }
    }
    if let Some(s) = exp.success.filter(|s| *s != report.success) {
        failures.push(format!(
            "success: expected {s}, got {} ({})",
            report.success, report.reason
        ));
    }
    if let Some(d) = exp.should_detect_kidnap.filter(|d| Some(*d) != report.detected_kidnap) {
        failures.push(format!(
            "kidnap detected: expected {d}, got {:?}",
            report.detected_kidnap
        ));
    }
    if let Some(r) = exp.should_recover.filter(|r| Some(*r) != report.recovered) {
        failures.push(format!("recovered: expected {r}, got {:?}", report.recovered));
    }
    failures
}

/// Scenario files (`*.json`) in `dir`, sorted by file name.
pub fn scenario_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ScenarioError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| ScenarioError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ScenarioError::EmptySuite(dir.to_path_buf()));
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SuiteOptions {
    pub repetitions: u32,
    pub seed_base: u64,
    /// Overrides every scenario's observation noise.
    pub sigma: Option<f64>,
}

/// Run every scenario in `dir` `repetitions` times with seeds
/// `seed_base, seed_base + 1, ...`.
pub fn run_suite(dir: impl AsRef<Path>, options: SuiteOptions) -> Result<Vec<RunReport>, ScenarioError> {
    let specs = scenario_files(dir)?
        .iter()
        .map(ScenarioSpec::load)
        .collect::<Result<Vec<_>, _>>()?;
    run_specs(&specs, options)
}

pub fn run_specs(specs: &[ScenarioSpec], options: SuiteOptions) -> Result<Vec<RunReport>, ScenarioError> {
    let mut reports = Vec::new();
    for spec in specs {
        let spec = match options.sigma {
            Some(s) => spec.clone().with_noise(s),
            None => spec.clone(),
        };
        for rep in 0..options.repetitions.max(1) {
            reports.push(run_scenario(&spec, options.seed_base + rep as u64)?);
        }
    }
    Ok(reports)
}
