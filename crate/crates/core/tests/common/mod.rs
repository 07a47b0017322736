//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use guide_core::agent::{AgentNote, AgentOutput};
use guide_core::map::{parse_map, serialize_map, Coordinate, Edge, Heading, Node, NodeId, TopoMap};
use guide_core::scenario::{EntryBody, RunReport, SimEntry};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const TAGS: [&str; 3] = ["stairs", "elevator", "noisy_area"];

pub fn id(s: &str) -> NodeId {
    NodeId::new(s).unwrap()
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    rng.next_u64() % n
}

fn chance(rng: &mut impl RngCore, percent: u64) -> bool {
    below(rng, 100) < percent
}

/// Geometrically consistent map: nodes on distinct cells of a 4x4 lattice
/// with uneven spacing, edges between nodes that see each other along a row
/// or column. Each direction is present independently, so some corridors
/// are one-way and some maps are disconnected.
pub fn random_map(seed: u64, max_nodes: usize) -> TopoMap {
    let mut r = rng(seed);
    let xs = spacing(&mut r);
    let ys = spacing(&mut r);
    let n = 2 + below(&mut r, (max_nodes - 1) as u64) as usize;
    let mut cells = BTreeSet::new();
    while cells.len() < n {
        cells.insert((below(&mut r, 4) as usize, below(&mut r, 4) as usize));
    }
    let cells: Vec<_> = cells.into_iter().collect();
    let mut map = TopoMap::new();
    let name = |i: usize| format!("n{i}");
    for (i, &(c, row)) in cells.iter().enumerate() {
        let mut tags = BTreeSet::new();
        if chance(&mut r, 20) {
            tags.insert(TAGS[below(&mut r, 3) as usize].to_string());
        }
        let label = chance(&mut r, 30).then(|| format!("room \"{i}\" east"));
        map.add_node(Node {
            id: id(&name(i)),
            position: Coordinate::new(xs[c], ys[row]),
            tags,
            label,
        })
        .unwrap();
    }
    for (i, &(ci, ri)) in cells.iter().enumerate() {
        for (j, &(cj, rj)) in cells.iter().enumerate() {
            if i == j || (ci != cj && ri != rj) {
                continue;
            }
            let between = cells.iter().any(|&(c, row)| {
                (c, row) != (ci, ri)
                    && (c, row) != (cj, rj)
                    && ((ci == cj && c == ci && row > ri.min(rj) && row < ri.max(rj))
                        || (ri == rj && row == ri && c > ci.min(cj) && c < ci.max(cj)))
            });
            if between || !chance(&mut r, 75) {
                continue;
            }
            let (dx, dy) = (xs[cj] - xs[ci], ys[rj] - ys[ri]);
            let deg = match (dx.partial_cmp(&0.0).unwrap(), dy.partial_cmp(&0.0).unwrap()) {
                (std::cmp::Ordering::Greater, _) => 0,
                (std::cmp::Ordering::Less, _) => 180,
                (_, std::cmp::Ordering::Greater) => 90,
                _ => 270,
            };
            let mut tags = BTreeSet::new();
            if chance(&mut r, 10) {
                tags.insert(TAGS[below(&mut r, 3) as usize].to_string());
            }
            map.add_edge(Edge {
                from: id(&name(i)),
                to: id(&name(j)),
                distance: dx.abs() + dy.abs(),
                direction: Heading::from_degrees(deg).unwrap(),
                tags,
                blocked: false,
            })
            .unwrap();
        }
    }
    map
}

/// Four increasing lattice coordinates with steps of 1..=6 in half meters.
fn spacing(r: &mut impl RngCore) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[0] = below(r, 5) as f64 * 0.5;
    for i in 1..4 {
        v[i] = v[i - 1] + (1 + below(r, 12)) as f64 * 0.5;
    }
    v
}

fn excluded_node(map: &TopoMap, n: &NodeId, avoid: &BTreeSet<String>, start: &NodeId) -> bool {
    n != start && map.node(n).unwrap().tags.iter().any(|t| avoid.contains(t))
}

/// All simple paths from `start` to `goal` with their lengths, honoring
/// avoided tags (start exempt) and blocked edges.
pub fn all_simple_paths(
    map: &TopoMap,
    start: &NodeId,
    goal: &NodeId,
    avoid: &BTreeSet<String>,
) -> Vec<(f64, Vec<NodeId>)> {
    let mut out = Vec::new();
    let mut path = vec![start.clone()];
    walk(map, goal, avoid, start, &mut path, 0.0, &mut out);
    out
}

fn walk(
    map: &TopoMap,
    goal: &NodeId,
    avoid: &BTreeSet<String>,
    start: &NodeId,
    path: &mut Vec<NodeId>,
    cost: f64,
    out: &mut Vec<(f64, Vec<NodeId>)>,
) {
    let here = path.last().unwrap().clone();
    if &here == goal {
        out.push((cost, path.clone()));
        return;
    }
    for e in map.edges().filter(|e| e.from == here) {
        if e.blocked || path.contains(&e.to) || e.tags.iter().any(|t| avoid.contains(t)) {
            continue;
        }
        if excluded_node(map, &e.to, avoid, start) {
            continue;
        }
        path.push(e.to.clone());
        walk(map, goal, avoid, start, path, cost + e.distance, out);
        path.pop();
    }
}

/// Brute-force optimum: least length, ties broken by the node-id sequence.
pub fn brute_force_best(
    map: &TopoMap,
    start: &NodeId,
    goal: &NodeId,
    avoid: &BTreeSet<String>,
) -> Option<(f64, Vec<NodeId>)> {
    let mut paths = all_simple_paths(map, start, goal, avoid);
    paths.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.iter().map(NodeId::as_str).cmp(b.1.iter().map(NodeId::as_str)))
    });
    paths.into_iter().next()
}

/// Independent geometry residual for one edge.
pub fn residual(map: &TopoMap, e: &Edge) -> f64 {
    let p = map.node(&e.from).unwrap().position;
    let q = map.node(&e.to).unwrap().position;
    let (c, s) = match e.direction.degrees() {
        0 => (1.0, 0.0),
        90 => (0.0, 1.0),
        180 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    };
    ((q.x - p.x - e.distance * c).powi(2) + (q.y - p.y - e.distance * s).powi(2)).sqrt()
}

/// Every directed cycle (as a node list, first node repeated implicitly),
/// each reported once from its smallest node.
pub fn directed_cycles(map: &TopoMap) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    let ids: Vec<NodeId> = map.nodes().map(|n| n.id.clone()).collect();
    for root in &ids {
        let mut path = vec![root.clone()];
        cycles_from(map, root, &mut path, &mut out);
    }
    out
}

fn cycles_from(map: &TopoMap, root: &NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
    let here = path.last().unwrap().clone();
    for e in map.edges().filter(|e| e.from == here) {
        if &e.to == root && path.len() >= 2 {
            out.push(path.clone());
        } else if e.to > *root && !path.contains(&e.to) {
            path.push(e.to.clone());
            cycles_from(map, root, path, out);
            path.pop();
        }
    }
}

/// Text of `map` with one edge rewritten: distance grown by `extra`,
/// direction rotated by `quarter_turns`.
pub fn perturbed(map: &TopoMap, target: &Edge, extra: f64, quarter_turns: i32) -> TopoMap {
    let prefix = format!("EDGE {} {} ", target.from, target.to);
    let mut text = String::new();
    for line in serialize_map(map).lines() {
        if line.starts_with(&prefix) {
            let dir = target.direction.rotate(quarter_turns);
            text.push_str(&format!(
                "{prefix}dist={} dir={}",
                target.distance + extra,
                dir.degrees()
            ));
        } else {
            text.push_str(line);
        }
        text.push('\n');
    }
    parse_map(&text).unwrap()
}

/// Cosine ranking by brute force, ties by id.
pub fn exhaustive(records: &[(String, Vec<f64>)], probe: &[f64], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = records
        .iter()
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(probe).map(|(a, b)| a * b).sum();
            (id.clone(), dot / (norm(v) * norm(probe)))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn suite(name: &str) -> PathBuf {
    fixture("scenarios").join(name)
}

/// After an edge is classified hazardous, the prompt comes before any move
/// along it.
pub fn prompt_precedes_flagged_moves(r: &RunReport) -> bool {
    let t = &r.transcript;
    for (i, e) in t.iter().enumerate() {
        let EntryBody::Note(AgentNote::HazardFlagged {
            from,
            to,
            hazardous: true,
        }) = &e.body
        else {
            continue;
        };
        for later in &t[i + 1..] {
            match &later.body {
                EntryBody::Output(AgentOutput::HazardPrompt { .. }) => break,
                EntryBody::Sim(SimEntry::Moved { from: f, to: g, .. }) if f == from && g == to => return false,
                _ => {}
            }
        }
    }
    true
}

/// Speeds after each speed utterance, starting from 1 m/s: "faster" and
/// "speed up" multiply by 5/4, "slow" by 4/5, "at N m/s" sets N, all clamped
/// to [0.3, 2.0].
pub fn speed_oracle(utterances: &[&str]) -> Vec<f64> {
    let mut v = 1.0_f64;
    let mut out = Vec::new();
    for u in utterances {
        let u = u.to_lowercase();
        let words: Vec<&str> = u.split_whitespace().collect();
        if let Some(i) = words.iter().position(|w| *w == "m/s") {
            v = words[i - 1].parse::<f64>().unwrap();
        } else if u.contains("faster") || u.contains("speed up") {
            v *= 1.25;
        } else if u.contains("slow") {
            v *= 0.8;
        } else {
            continue;
        }
        v = v.clamp(0.3, 2.0);
        out.push(v);
    }
    out
}
