//! Route planning over a [`TopoMap`].
//!
//! Routes minimize total distance. Equal-cost routes are ordered by their
//! node-id sequence, compared lexicographically, so planning is fully
//! deterministic. Preferences are hard exclusions: a node or edge carrying an
//! avoided tag is never used, and blocked edges are skipped unless the
//! constraints say otherwise.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{Edge, Heading, NodeId, TopoMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("{goal} cannot be reached from {start}")]
    Unreachable { start: NodeId, goal: NodeId },
    /// A route exists, but every one of them violates the constraints.
    #[error("{goal} can only be reached from {start} by ignoring the current constraints")]
    UnreachableUnderConstraints { start: NodeId, goal: NodeId },
    #[error("k must be at least 1")]
    ZeroAlternatives,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("heading {0} is not one of 0, 90, 180, 270")]
pub struct UnquantizedHeading(pub i64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConstraints {
    pub avoid_tags: BTreeSet<String>,
    pub avoid_blocked: bool,
    pub max_routes: usize,
}

impl Default for PlanConstraints {
    fn default() -> Self {
        PlanConstraints {
            avoid_tags: BTreeSet::new(),
            avoid_blocked: true,
            max_routes: 3,
        }
    }
}

impl PlanConstraints {
    pub fn avoiding<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        PlanConstraints {
            avoid_tags: tags.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    fn unconstrained() -> Self {
        PlanConstraints {
            avoid_tags: BTreeSet::new(),
            avoid_blocked: false,
            max_routes: 1,
        }
    }

    fn node_allowed(&self, map: &TopoMap, id: &NodeId) -> bool {
        map.node(id).is_some_and(|n| n.tags.is_disjoint(&self.avoid_tags))
    }

    fn edge_allowed(&self, edge: &Edge) -> bool {
        !(self.avoid_blocked && edge.blocked) && edge.tags.is_disjoint(&self.avoid_tags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnCommand {
    Straight,
    Left,
    Right,
    TurnAround,
}

impl TurnCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            TurnCommand::Straight => "straight",
            TurnCommand::Left => "left",
            TurnCommand::Right => "right",
            TurnCommand::TurnAround => "around",
        }
    }

    /// Counterclockwise quarter turns.
    pub fn quarter_turns(self) -> i32 {
        match self {
            TurnCommand::Straight => 0,
            TurnCommand::Left => 1,
            TurnCommand::TurnAround => 2,
            TurnCommand::Right => 3,
        }
    }

    pub fn apply(self, heading: Heading) -> Heading {
        heading.rotate(self.quarter_turns())
    }
}

impl fmt::Display for TurnCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Turn needed to go from `heading` to `edge_direction`; left is +90°.
pub fn relative_turn(heading: Heading, edge_direction: Heading) -> TurnCommand {
    let r = (edge_direction.degrees() as i32 - heading.degrees() as i32).rem_euclid(360);
    match r {
        0 => TurnCommand::Straight,
        90 => TurnCommand::Left,
        180 => TurnCommand::TurnAround,
        _ => TurnCommand::Right,
    }
}

/// [`relative_turn`] on raw degrees.
pub fn relative_turn_degrees(heading: i64, edge_direction: i64) -> Result<TurnCommand, UnquantizedHeading> {
    let h = Heading::from_degrees(heading).ok_or(UnquantizedHeading(heading))?;
    let d = Heading::from_degrees(edge_direction).ok_or(UnquantizedHeading(edge_direction))?;
    Ok(relative_turn(h, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLeg {
    pub turn: TurnCommand,
    pub from: NodeId,
    pub to: NodeId,
    /// Label of `to`, or its id when unlabeled.
    pub to_name: String,
    pub distance: f64,
    pub absolute_direction: Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub start: NodeId,
    pub goal: NodeId,
    pub goal_name: String,
    pub initial_heading: Heading,
    pub legs: Vec<RouteLeg>,
    pub total_distance: f64,
    pub description: String,
}

impl Route {
    /// Node sequence from start to goal.
    pub fn nodes(&self) -> Vec<NodeId> {
        std::iter::once(self.start.clone())
            .chain(self.legs.iter().map(|l| l.to.clone()))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.legs.len()
    }

    pub fn uses_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.legs.iter().any(|l| &l.from == from && &l.to == to)
    }

    /// Heading after the last leg (or the initial heading for an empty route).
    pub fn final_heading(&self) -> Heading {
        self.legs.last().map_or(self.initial_heading, |l| l.absolute_direction)
    }

    /// Build a route from a node path. The path must be edge-connected.
    pub fn from_path(map: &TopoMap, path: &[NodeId], initial_heading: Heading) -> Option<Route> {
        let start = path.first()?.clone();
        let goal = path.last()?.clone();
        let mut heading = initial_heading;
        let mut legs = Vec::with_capacity(path.len().saturating_sub(1));
        let mut total = 0.0;
        for w in path.windows(2) {
            let edge = map.edge(&w[0], &w[1])?;
            let turn = relative_turn(heading, edge.direction);
            heading = edge.direction;
            total += edge.distance;
            legs.push(RouteLeg {
                turn,
                from: w[0].clone(),
                to: w[1].clone(),
                to_name: map.node(&w[1])?.display_name().to_string(),
                distance: edge.distance,
                absolute_direction: edge.direction,
            });
        }
        let mut route = Route {
            goal_name: map.node(&goal)?.display_name().to_string(),
            start,
            goal,
            initial_heading,
            legs,
            total_distance: total,
            description: String::new(),
        };
        route.description = describe_route(&route);
        Some(route)
    }
}

/// One line per leg: `Leg <n>: turn <kind>, walk <d> m to <name>.`
pub fn describe_route(route: &Route) -> String {
    if route.legs.is_empty() {
        return format!("You are already at {}.", route.goal_name);
    }
    route
        .legs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            format!(
                "Leg {}: turn {}, walk {} m to {}.",
                i + 1,
                l.turn,
                l.distance,
                l.to_name
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq)]
struct Label {
    cost: f64,
    path: Vec<NodeId>,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.path.cmp(&other.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over labels ordered by `(cost, node sequence)`, with extra node
/// and edge exclusions for the deviation search.
#[allow(clippy::too_many_arguments)]
fn best_path(
    map: &TopoMap,
    start: &NodeId,
    goal: &NodeId,
    constraints: &PlanConstraints,
    banned_nodes: &HashSet<NodeId>,
    banned_edges: &HashSet<(NodeId, NodeId)>,
    prefix_cost: f64,
    prefix: &[NodeId],
) -> Option<Label> {
    let mut best: HashMap<NodeId, Label> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut init_path = prefix.to_vec();
    init_path.push(start.clone());
    let init = Label {
        cost: prefix_cost,
        path: init_path,
    };
    best.insert(start.clone(), init.clone());
    heap.push(std::cmp::Reverse(init));

    while let Some(std::cmp::Reverse(label)) = heap.pop() {
        let node = label.path.last().expect("non-empty path").clone();
        if best.get(&node).is_some_and(|b| *b < label) {
            continue;
        }
        if &node == goal {
            return Some(label);
        }
        for edge in map.neighbors(&node).ok()? {
            if banned_nodes.contains(&edge.to)
                || banned_edges.contains(&(edge.from.clone(), edge.to.clone()))
                || !constraints.edge_allowed(edge)
                || !constraints.node_allowed(map, &edge.to)
                || label.path.contains(&edge.to)
            {
                continue;
            }
            let mut path = label.path.clone();
            path.push(edge.to.clone());
            let next = Label {
                cost: label.cost + edge.distance,
                path,
            };
            if best.get(&edge.to).is_none_or(|b| next < *b) {
                best.insert(edge.to.clone(), next.clone());
                heap.push(std::cmp::Reverse(next));
            }
        }
    }
    None
}

fn check_nodes(map: &TopoMap, start: &NodeId, goal: &NodeId) -> Result<(), PlanError> {
    for id in [start, goal] {
        if !map.contains(id) {
            return Err(PlanError::UnknownNode(id.clone()));
        }
    }
    Ok(())
}

fn unreachable_error(map: &TopoMap, start: &NodeId, goal: &NodeId) -> PlanError {
    let open = best_path(
        map,
        start,
        goal,
        &PlanConstraints::unconstrained(),
        &HashSet::new(),
        &HashSet::new(),
        0.0,
        &[],
    );
    if open.is_some() {
        PlanError::UnreachableUnderConstraints {
            start: start.clone(),
            goal: goal.clone(),
        }
    } else {
        PlanError::Unreachable {
            start: start.clone(),
            goal: goal.clone(),
        }
    }
}

/// Shortest route honoring `constraints`.
///
/// The start node is exempt from tag exclusion (the traveller is already
/// there); the goal is not.
pub fn plan_route(
    map: &TopoMap,
    start: &NodeId,
    goal: &NodeId,
    initial_heading: Heading,
    constraints: &PlanConstraints,
) -> Result<Route, PlanError> {
    check_nodes(map, start, goal)?;
    if start != goal && !constraints.node_allowed(map, goal) {
        return Err(unreachable_error(map, start, goal));
    }
    let label = best_path(
        map,
        start,
        goal,
        constraints,
        &HashSet::new(),
        &HashSet::new(),
        0.0,
        &[],
    )
    .ok_or_else(|| unreachable_error(map, start, goal))?;
    Ok(Route::from_path(map, &label.path, initial_heading).expect("path follows map edges"))
}

/// Up to `k` loop-free routes in nondecreasing length (Yen's deviation
/// search). The first element equals [`plan_route`]'s result.
pub fn k_alternative_routes(
    map: &TopoMap,
    start: &NodeId,
    goal: &NodeId,
    initial_heading: Heading,
    k: usize,
    constraints: &PlanConstraints,
) -> Result<Vec<Route>, PlanError> {
    if k == 0 {
        return Err(PlanError::ZeroAlternatives);
    }
    let first = plan_route(map, start, goal, initial_heading, constraints)?;
    if first.is_empty() {
        return Ok(vec![first]);
    }
    let mut accepted: Vec<Label> = vec![Label {
        cost: first.total_distance,
        path: first.nodes(),
    }];
    let mut candidates: BTreeSet<Label> = BTreeSet::new();

    while accepted.len() < k {
        let last = accepted.last().expect("non-empty").path.clone();
        for i in 0..last.len() - 1 {
            let spur = &last[i];
            let root = &last[..i];
            let root_cost: f64 = last[..=i]
                .windows(2)
                .map(|w| map.edge(&w[0], &w[1]).expect("edge").distance)
                .sum();
            let mut banned_edges = HashSet::new();
            for p in &accepted {
                if p.path.len() > i + 1 && p.path[..=i] == last[..=i] {
                    banned_edges.insert((p.path[i].clone(), p.path[i + 1].clone()));
                }
            }
            let banned_nodes: HashSet<NodeId> = root.iter().cloned().collect();
            if let Some(label) = best_path(
                map,
                spur,
                goal,
                constraints,
                &banned_nodes,
                &banned_edges,
                root_cost,
                root,
            ) {
                // Recompute the cost left to right so equal paths compare
                // equal regardless of where the deviation happened.
                let cost = path_cost(map, &label.path);
                let cand = Label { cost, path: label.path };
                if !accepted.iter().any(|a| a.path == cand.path) {
                    candidates.insert(cand);
                }
            }
        }
        match candidates.pop_first() {
            Some(next) => accepted.push(next),
            None => break,
        }
    }

    Ok(accepted
        .into_iter()
        .map(|l| Route::from_path(map, &l.path, initial_heading).expect("path follows map edges"))
        .collect())
}

fn path_cost(map: &TopoMap, path: &[NodeId]) -> f64 {
    path.windows(2)
        .map(|w| map.edge(&w[0], &w[1]).expect("edge").distance)
        .fold(0.0, |acc, d| acc + d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::parse_map;

    pub(crate) const RECT: &str = "MAP v1
NODE A 0 0
NODE B 4 0
NODE C 4 3
NODE D 0 3
EDGE A B dist=4 dir=0
EDGE B A dist=4 dir=180
EDGE B C dist=3 dir=90
EDGE C B dist=3 dir=270
EDGE C D dist=4 dir=180
EDGE D C dist=4 dir=0
EDGE D A dist=3 dir=270
EDGE A D dist=3 dir=90
";

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn names(r: &Route) -> Vec<String> {
        r.nodes().iter().map(|n| n.to_string()).collect()
    }

    #[test]
    fn relative_turn_table() {
        use TurnCommand::*;
        assert_eq!(relative_turn_degrees(0, 0).unwrap(), Straight);
        assert_eq!(relative_turn_degrees(0, 90).unwrap(), Left);
        assert_eq!(relative_turn_degrees(0, 270).unwrap(), Right);
        assert_eq!(relative_turn_degrees(270, 0).unwrap(), Left);
        assert_eq!(relative_turn_degrees(90, 270).unwrap(), TurnAround);
        assert_eq!(relative_turn_degrees(45, 0), Err(UnquantizedHeading(45)));
        for h in Heading::ALL {
            assert_eq!(relative_turn(h, h), Straight);
            for d in Heading::ALL {
                assert_eq!(relative_turn(h, d).apply(h), d);
            }
        }
    }

    #[test]
    fn rectangle_tie_break_and_identity() {
        let m = parse_map(RECT).unwrap();
        let r = plan_route(&m, &id("A"), &id("C"), Heading::EAST, &PlanConstraints::default()).unwrap();
        assert_eq!(r.total_distance, 7.0);
        assert_eq!(names(&r), ["A", "B", "C"]);
        assert_eq!(r.legs[0].turn, TurnCommand::Straight);
        assert_eq!(r.legs[1].turn, TurnCommand::Left);

        let same = plan_route(&m, &id("A"), &id("A"), Heading::EAST, &PlanConstraints::default()).unwrap();
        assert!(same.is_empty());
        assert_eq!(same.total_distance, 0.0);
        assert_eq!(same.description, "You are already at A.");
    }

    #[test]
    fn avoided_tag_forces_other_side() {
        let text = RECT.replace("NODE B 4 0", "NODE B 4 0 tag=stairs");
        let m = parse_map(&text).unwrap();
        let r = plan_route(
            &m,
            &id("A"),
            &id("C"),
            Heading::EAST,
            &PlanConstraints::avoiding(["stairs"]),
        )
        .unwrap();
        assert_eq!(names(&r), ["A", "D", "C"]);
        assert_eq!(r.total_distance, 7.0);
        assert_eq!(
            plan_route(
                &m,
                &id("A"),
                &id("B"),
                Heading::EAST,
                &PlanConstraints::avoiding(["stairs"])
            ),
            Err(PlanError::UnreachableUnderConstraints {
                start: id("A"),
                goal: id("B")
            })
        );
    }

    #[test]
    fn unreachable_kinds() {
        let m = parse_map("MAP v1\nNODE A 0 0\nNODE B 4 0\n").unwrap();
        assert_eq!(
            plan_route(&m, &id("A"), &id("B"), Heading::EAST, &PlanConstraints::default()),
            Err(PlanError::Unreachable {
                start: id("A"),
                goal: id("B")
            })
        );
        assert_eq!(
            plan_route(&m, &id("A"), &id("Z"), Heading::EAST, &PlanConstraints::default()),
            Err(PlanError::UnknownNode(id("Z")))
        );
    }

    #[test]
    fn blocking_and_unblocking() {
        let mut m = parse_map(RECT).unwrap();
        let c = PlanConstraints::default();
        let before = plan_route(&m, &id("A"), &id("B"), Heading::EAST, &c).unwrap();
        m.set_edge_blocked(&id("A"), &id("B"), true).unwrap();
        let detour = plan_route(&m, &id("A"), &id("B"), Heading::EAST, &c).unwrap();
        assert_eq!(names(&detour), ["A", "D", "C", "B"]);
        assert_eq!(detour.total_distance, 10.0);
        m.set_edge_blocked(&id("A"), &id("B"), false).unwrap();
        assert_eq!(plan_route(&m, &id("A"), &id("B"), Heading::EAST, &c).unwrap(), before);
    }

    #[test]
    fn alternatives_on_rectangle() {
        let m = parse_map(RECT).unwrap();
        let c = PlanConstraints::default();
        let rs = k_alternative_routes(&m, &id("A"), &id("C"), Heading::EAST, 2, &c).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(names(&rs[0]), ["A", "B", "C"]);
        assert_eq!(names(&rs[1]), ["A", "D", "C"]);
        let one = k_alternative_routes(&m, &id("A"), &id("C"), Heading::EAST, 1, &c).unwrap();
        assert_eq!(
            one,
            vec![plan_route(&m, &id("A"), &id("C"), Heading::EAST, &c).unwrap()]
        );
        assert_eq!(
            k_alternative_routes(&m, &id("A"), &id("C"), Heading::EAST, 0, &c),
            Err(PlanError::ZeroAlternatives)
        );
    }

    #[test]
    fn single_path_caps_alternatives() {
        let m =
            parse_map("MAP v1\nNODE A 0 0\nNODE B 2 0\nNODE C 2 2\nEDGE A B dist=2 dir=0\nEDGE B C dist=2 dir=90\n")
                .unwrap();
        let rs = k_alternative_routes(&m, &id("A"), &id("C"), Heading::EAST, 3, &PlanConstraints::default()).unwrap();
        assert_eq!(rs.len(), 1);
    }

    #[test]
    fn description_template() {
        let m = parse_map(RECT).unwrap();
        let r = plan_route(&m, &id("A"), &id("C"), Heading::EAST, &PlanConstraints::default()).unwrap();
        assert_eq!(
            describe_route(&r),
            "Leg 1: turn straight, walk 4 m to B.\nLeg 2: turn left, walk 3 m to C."
        );
        assert_eq!(describe_route(&r), r.description);
    }
}
