use std::collections::BTreeSet;

use guide_core::map::{parse_map, Coordinate, Edge, Heading, MapError, Node, NodeId, TopoMap};
use serde::{Deserialize, Serialize};

/// Map render document served by `GET /api/v1/maps/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub id: String,
    pub name: Option<String>,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    pub bounds: Bounds,
    /// Canonical map text.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub tags: BTreeSet<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: NodeId,
    pub to: NodeId,
    pub distance: f64,
    /// Degrees, counter-clockwise from +x.
    pub direction: Heading,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl MapDocument {
    pub fn new(id: &str, map: &TopoMap) -> Self {
        let nodes: Vec<NodeDoc> = map
            .nodes()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                x: n.position.x,
                y: n.position.y,
                tags: n.tags.clone(),
                label: n.label.clone(),
            })
            .collect();
        let edges = map
            .edges()
            .map(|e| EdgeDoc {
                from: e.from.clone(),
                to: e.to.clone(),
                distance: e.distance,
                direction: e.direction,
                tags: e.tags.clone(),
            })
            .collect();
        let fold = |f: fn(f64, f64) -> f64, pick: fn(&NodeDoc) -> f64, init: f64| nodes.iter().map(pick).fold(init, f);
        let bounds = if nodes.is_empty() {
            Bounds {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 0.0,
                max_y: 0.0,
            }
        } else {
            Bounds {
                min_x: fold(f64::min, |n| n.x, f64::INFINITY),
                min_y: fold(f64::min, |n| n.y, f64::INFINITY),
                max_x: fold(f64::max, |n| n.x, f64::NEG_INFINITY),
                max_y: fold(f64::max, |n| n.y, f64::NEG_INFINITY),
            }
        };
        MapDocument {
            id: id.to_string(),
            name: map.name.clone(),
            nodes,
            edges,
            bounds,
            text: map.serialize(),
        }
    }

    /// Rebuild the map from the node and edge lists.
    pub fn to_map(&self) -> Result<TopoMap, MapError> {
        let mut map = TopoMap::new();
        map.name = self.name.clone();
        for n in &self.nodes {
            map.add_node(Node {
                id: n.id.clone(),
                position: Coordinate::new(n.x, n.y),
                tags: n.tags.clone(),
                label: n.label.clone(),
            })?;
        }
        for e in &self.edges {
            map.add_edge(Edge {
                from: e.from.clone(),
                to: e.to.clone(),
                distance: e.distance,
                direction: e.direction,
                tags: e.tags.clone(),
                blocked: false,
            })?;
        }
        Ok(map)
    }

    /// Parse the embedded map text.
    pub fn parse_text(&self) -> Result<TopoMap, MapError> {
        parse_map(&self.text)
    }
}
