//! Kinematic world at node resolution.
//!
//! The world owns the ground-truth pose, executes turns and straight moves
//! on a virtual clock, renders observations through the stub embedder and
//! injects faults. Kidnaps change the pose silently and add no odometry.

use std::collections::BTreeMap;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{place_descriptor, StubEmbedder};
use crate::map::{Heading, NodeId, TopoMap};
use crate::planner::{Route, TurnCommand};
use crate::vector_store::{Embedding, EmbeddingRecord, RecordMeta, StoreKind, VectorStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("node `{0}` is not on the map")]
    UnknownNode(NodeId),
    #[error("object `{label}` sits on missing edge {from}->{to}")]
    UnknownObjectEdge { label: String, from: NodeId, to: NodeId },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pose {
    pub node: NodeId,
    pub heading: Heading,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldObject {
    pub label: String,
    pub at_edge: (NodeId, NodeId),
    #[serde(default)]
    pub hazard_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultSpec {
    Kidnap {
        trigger_leg: u32,
        teleport_to: NodeId,
        new_heading: Heading,
    },
    NoiseSigma {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalReport {
    pub from: NodeId,
    pub to: NodeId,
    pub distance: f64,
    pub odometer: f64,
    pub duration_s: f64,
    /// Set when a kidnap fired at the end of this move. Never shown to the agent.
    pub kidnapped_to: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MoveOutcome {
    Arrived(ArrivalReport),
    Blocked { node: NodeId, heading: Heading },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub embedding: Embedding,
    pub object_labels: Vec<String>,
}

/// How places look. Nodes listed in `aliases` render with another node's
/// descriptor, which makes them indistinguishable to place recognition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    #[serde(default)]
    pub aliases: BTreeMap<NodeId, NodeId>,
}

impl Appearance {
    pub fn descriptor(&self, node: &NodeId, heading: Heading) -> String {
        let shown = self.aliases.get(node).unwrap_or(node);
        place_descriptor(shown.as_str(), heading.degrees())
    }
}

pub struct SimWorld {
    map: TopoMap,
    pose: Pose,
    objects: Vec<WorldObject>,
    faults: Vec<FaultSpec>,
    seed: u64,
    odometer: f64,
    clock_s: f64,
    legs_completed: u32,
    sigma: f64,
    embedder: StubEmbedder,
    appearance: Appearance,
    noise: Xoshiro256PlusPlus,
    fired: Vec<bool>,
}

impl SimWorld {
    pub fn new(
        map: TopoMap,
        start: Pose,
        objects: Vec<WorldObject>,
        faults: Vec<FaultSpec>,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !map.contains(&start.node) {
            return Err(SimError::UnknownNode(start.node));
        }
        for o in &objects {
            if map.edge(&o.at_edge.0, &o.at_edge.1).is_none() {
                return Err(SimError::UnknownObjectEdge {
                    label: o.label.clone(),
                    from: o.at_edge.0.clone(),
                    to: o.at_edge.1.clone(),
                });
            }
        }
        let mut sigma = 0.0;
        for f in &faults {
            match f {
                FaultSpec::Kidnap { teleport_to, .. } if !map.contains(teleport_to) => {
                    return Err(SimError::UnknownNode(teleport_to.clone()));
                }
                FaultSpec::NoiseSigma { sigma: s } if !(s.is_finite() && *s >= 0.0) => {
                    return Err(SimError::BadSigma(*s));
                }
                FaultSpec::NoiseSigma { sigma: s } => sigma = *s,
                _ => {}
            }
        }
        let fired = vec![false; faults.len()];
        Ok(SimWorld {
            map,
            pose: start,
            objects,
            faults,
            seed,
            odometer: 0.0,
            clock_s: 0.0,
            legs_completed: 0,
            sigma,
            embedder: StubEmbedder::default(),
            appearance: Appearance::default(),
            noise: Xoshiro256PlusPlus::seed_from_u64(seed),
            fired,
        })
    }

    pub fn with_appearance(mut self, appearance: Appearance) -> Self {
        self.appearance = appearance;
        self
    }

    pub fn with_embedder(mut self, embedder: StubEmbedder) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn map(&self) -> &TopoMap {
        &self.map
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn odometer(&self) -> f64 {
        self.odometer
    }

    /// Simulated seconds elapsed.
    pub fn clock(&self) -> f64 {
        self.clock_s
    }

    pub fn legs_completed(&self) -> u32 {
        self.legs_completed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn objects(&self) -> &[WorldObject] {
        &self.objects
    }

    pub fn turn(&mut self, turn: TurnCommand) {
        self.pose.heading = turn.apply(self.pose.heading);
    }

    /// Walk the edge leaving the current node in the current heading.
    pub fn advance(&mut self, speed_mps: f64) -> MoveOutcome {
        let Some(edge) = self.map.edge_in_direction(&self.pose.node, self.pose.heading) else {
            return MoveOutcome::Blocked {
                node: self.pose.node.clone(),
                heading: self.pose.heading,
            };
        };
        let (from, to, distance) = (edge.from.clone(), edge.to.clone(), edge.distance);
        self.odometer += distance;
        self.clock_s += distance / speed_mps;
        self.pose.node = to.clone();
        self.legs_completed += 1;

        let mut kidnapped_to = None;
        for (i, f) in self.faults.iter().enumerate() {
            if let FaultSpec::Kidnap {
                trigger_leg,
                teleport_to,
                new_heading,
            } = f
            {
                if !self.fired[i] && *trigger_leg == self.legs_completed {
                    self.fired[i] = true;
                    self.pose = Pose {
                        node: teleport_to.clone(),
                        heading: *new_heading,
                    };
                    kidnapped_to = Some(self.pose.clone());
                }
            }
        }
        MoveOutcome::Arrived(ArrivalReport {
            from,
            to,
            distance,
            odometer: self.odometer,
            duration_s: distance / speed_mps,
            kidnapped_to,
        })
    }

    /// Turn, then advance.
    pub fn execute(&mut self, turn: TurnCommand, speed_mps: f64) -> MoveOutcome {
        let before = self.pose.clone();
        self.turn(turn);
        let out = self.advance(speed_mps);
        if matches!(out, MoveOutcome::Blocked { .. }) {
            self.pose = before;
        }
        out
    }

    /// What the camera sees from the true pose. Every call consumes one
    /// draw from the world's noise stream, whether or not sigma is zero.
    pub fn observe(&mut self) -> Observation {
        let descriptor = self.appearance.descriptor(&self.pose.node, self.pose.heading);
        let draw = self.noise.next_u64();
        let embedding = if self.sigma > 0.0 {
            self.embedder.embed(&descriptor, self.sigma, draw)
        } else {
            self.embedder.base(&descriptor)
        };
        let ahead = self
            .map
            .edge_in_direction(&self.pose.node, self.pose.heading)
            .map(|e| (e.from.clone(), e.to.clone()));
        let object_labels = self
            .objects
            .iter()
            .filter(|o| Some(&o.at_edge) == ahead.as_ref())
            .map(|o| o.label.clone())
            .collect();
        Observation {
            embedding,
            object_labels,
        }
    }

    /// Ground truth for the edge the robot faces, if any object on it is a hazard.
    pub fn hazard_ahead(&self) -> Option<bool> {
        let e = self.map.edge_in_direction(&self.pose.node, self.pose.heading)?;
        let on_edge: Vec<_> = self
            .objects
            .iter()
            .filter(|o| o.at_edge.0 == e.from && o.at_edge.1 == e.to)
            .collect();
        (!on_edge.is_empty()).then(|| on_edge.iter().any(|o| o.hazard_ground_truth))
    }
}

/// One record per (node, heading). With `sigma > 0` each record is a noisy
/// rendering seeded from `seed` and the record's position in the sweep.
pub fn build_environment_store(
    map: &TopoMap,
    embedder: &StubEmbedder,
    appearance: &Appearance,
    sigma: f64,
    seed: u64,
) -> VectorStore {
    let mut store = VectorStore::with_dim(StoreKind::Environment, embedder.dim);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for node in map.nodes() {
        for heading in Heading::ALL {
            let descriptor = appearance.descriptor(&node.id, heading);
            let draw = rng.next_u64();
            let embedding = if sigma > 0.0 {
                embedder.embed(&descriptor, sigma, draw)
            } else {
                embedder.base(&descriptor)
            };
            let id = place_descriptor(node.id.as_str(), heading.degrees());
            store
                .insert(EmbeddingRecord {
                    id,
                    embedding,
                    meta: RecordMeta {
                        node: node.id.clone(),
                        orientation: heading,
                        kind: StoreKind::Environment,
                        source: descriptor,
                    },
                })
                .expect("ids are unique per (node, heading)");
        }
    }
    store
}

/// Environment records matching the (node, heading) sequence of a route:
/// the start pose followed by each leg's arrival pose.
pub fn navigational_records(env: &VectorStore, route: &Route) -> Vec<EmbeddingRecord> {
    std::iter::once((&route.start, route.initial_heading))
        .chain(route.legs.iter().map(|l| (&l.to, l.absolute_direction)))
        .filter_map(|(n, h)| env.find_place(n, h).cloned())
        .collect()
}
