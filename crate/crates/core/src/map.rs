//! Text-based topological map.
//!
//! A map is a directed, weighted graph whose nodes carry planar coordinates
//! and whose edges are straight segments in one of the four axis directions.
//! Maps are authored in the line-oriented `MAP v1` format:
//!
//! ```text
//! MAP v1
//! NODE <id> <x> <y> [tag=<token>]... [label="<free text>"]
//! EDGE <from> <to> dist=<positive real> dir=<0|90|180|270> [tag=<token>]...
//! ```
//!
//! Blank lines and `#` comments are ignored. The header may carry an optional
//! `name=<token>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative tolerance for [`TopoMap::validate_geometry`].
pub const DEFAULT_GEOMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate node id `{id}`")]
    DuplicateNode { line: usize, id: NodeId },
    #[error("line {line}: duplicate edge {from} -> {to}")]
    DuplicateEdge { line: usize, from: NodeId, to: NodeId },
    #[error("line {line}: edge references unknown node `{id}`")]
    UnknownEdgeEndpoint { line: usize, id: NodeId },
    #[error("line {line}: direction {value} is not one of 0, 90, 180, 270")]
    UnquantizedDirection { line: usize, value: String },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown edge {0} -> {1}")]
    UnknownEdge(NodeId, NodeId),
    #[error("invalid node id `{0}`")]
    InvalidNodeId(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// Identifier of a map node: letters, digits, `_` and `-`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, MapError> {
        let id = id.into();
        if is_token(&id) {
            Ok(NodeId(id))
        } else {
            Err(MapError::InvalidNodeId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = MapError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        NodeId::new(value)
    }
}

impl From<NodeId> for String {
    fn from(value: NodeId) -> Self {
        value.0
    }
}

impl FromStr for NodeId {
    type Err = MapError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::new(s)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for NodeId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for NodeId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Absolute direction, counterclockwise from the +x axis, quantized to right
/// angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Heading(u16);

impl Heading {
    pub const EAST: Heading = Heading(0);
    pub const NORTH: Heading = Heading(90);
    pub const WEST: Heading = Heading(180);
    pub const SOUTH: Heading = Heading(270);
    pub const ALL: [Heading; 4] = [Self::EAST, Self::NORTH, Self::WEST, Self::SOUTH];

    /// Accepts exactly 0, 90, 180 or 270.
    pub fn from_degrees(deg: i64) -> Option<Heading> {
        match deg {
            0 | 90 | 180 | 270 => Some(Heading(deg as u16)),
            _ => None,
        }
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    /// Exact unit vector for this heading.
    pub fn unit(self) -> (f64, f64) {
        match self.0 {
            0 => (1.0, 0.0),
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    }

    /// Rotate counterclockwise by `quarter_turns` right angles.
    pub fn rotate(self, quarter_turns: i32) -> Heading {
        let q = (self.0 as i32 / 90 + quarter_turns).rem_euclid(4);
        Heading((q * 90) as u16)
    }

    pub fn reverse(self) -> Heading {
        self.rotate(2)
    }
}

impl TryFrom<i64> for Heading {
    type Error = String;
    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Heading::from_degrees(value).ok_or_else(|| format!("heading {value} is not a right angle"))
    }
}

impl From<Heading> for i64 {
    fn from(value: Heading) -> Self {
        value.0 as i64
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub x: f64,
    pub y: f64,
}

impl Coordinate {
    pub fn new(x: f64, y: f64) -> Self {
        Coordinate { x, y }
    }

    pub fn distance_to(self, other: Coordinate) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub position: Coordinate,
    pub tags: BTreeSet<String>,
    pub label: Option<String>,
}

impl Node {
    /// Label if present, otherwise the id.
    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(self.id.as_str())
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub distance: f64,
    pub direction: Heading,
    pub tags: BTreeSet<String>,
    /// Runtime hazard flag; never written to map files.
    #[serde(default)]
    pub blocked: bool,
}

/// One edge whose endpoint disagrees with the coordinate transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub from: NodeId,
    pub to: NodeId,
    pub expected: Coordinate,
    pub actual: Coordinate,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopoMap {
    pub name: Option<String>,
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<(NodeId, NodeId), Edge>,
}

impl TopoMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MapError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        parse_map(&text)
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), MapError> {
        if self.nodes.contains_key(&node.id) {
            return Err(MapError::DuplicateNode { line: 0, id: node.id });
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<(), MapError> {
        for id in [&edge.from, &edge.to] {
            if !self.nodes.contains_key(id) {
                return Err(MapError::UnknownEdgeEndpoint {
                    line: 0,
                    id: id.clone(),
                });
            }
        }
        let key = (edge.from.clone(), edge.to.clone());
        if self.edges.contains_key(&key) {
            return Err(MapError::DuplicateEdge {
                line: 0,
                from: edge.from,
                to: edge.to,
            });
        }
        self.edges.insert(key, edge);
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_by_str(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|(k, _)| k.as_str() == id).map(|(_, n)| n)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Edges in `(from, to)` order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, from: &NodeId, to: &NodeId) -> Option<&Edge> {
        self.edges.get(&(from.clone(), to.clone()))
    }

    /// Outgoing edges of `node`, sorted by destination id.
    pub fn neighbors(&self, node: &NodeId) -> Result<Vec<&Edge>, MapError> {
        if !self.nodes.contains_key(node) {
            return Err(MapError::UnknownNode(node.clone()));
        }
        Ok(self
            .edges
            .range((node.clone(), NodeId(String::new()))..)
            .take_while(|((from, _), _)| from == node)
            .map(|(_, e)| e)
            .collect())
    }

    /// The outgoing edge of `node` pointing in `heading`, if any.
    pub fn edge_in_direction(&self, node: &NodeId, heading: Heading) -> Option<&Edge> {
        self.neighbors(node).ok()?.into_iter().find(|e| e.direction == heading)
    }

    /// Set the runtime blocked flag on `from -> to` and, if present, its
    /// reverse edge.
    pub fn set_edge_blocked(&mut self, from: &NodeId, to: &NodeId, blocked: bool) -> Result<(), MapError> {
        let edge = self
            .edges
            .get_mut(&(from.clone(), to.clone()))
            .ok_or_else(|| MapError::UnknownEdge(from.clone(), to.clone()))?;
        edge.blocked = blocked;
        if let Some(rev) = self.edges.get_mut(&(to.clone(), from.clone())) {
            rev.blocked = blocked;
        }
        Ok(())
    }

    /// Clear every runtime blocked flag.
    pub fn clear_blocked(&mut self) {
        for e in self.edges.values_mut() {
            e.blocked = false;
        }
    }

    /// All tags used by nodes or edges.
    pub fn all_tags(&self) -> BTreeSet<&str> {
        self.nodes
            .values()
            .flat_map(|n| n.tags.iter())
            .chain(self.edges.values().flat_map(|e| e.tags.iter()))
            .map(String::as_str)
            .collect()
    }

    /// Check `p_to = p_from + d * (cos θ, sin θ)` on every edge.
    ///
    /// An edge is reported when the residual exceeds `rel_tol * max(d, 1)`.
    pub fn validate_geometry(&self, rel_tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        for e in self.edges.values() {
            let (Some(a), Some(b)) = (self.nodes.get(&e.from), self.nodes.get(&e.to)) else {
                continue;
            };
            let (ux, uy) = e.direction.unit();
            let expected = Coordinate::new(a.position.x + e.distance * ux, a.position.y + e.distance * uy);
            let residual = expected.distance_to(b.position);
            if residual.is_nan() || residual > rel_tol * e.distance.max(1.0) {
                out.push(Violation {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    expected,
                    actual: b.position,
                    residual,
                });
            }
        }
        out
    }

    /// Edges `a -> b` without a matching `b -> a`. These are warnings, since
    /// one-way corridors are legal.
    pub fn missing_reverse_edges(&self) -> Vec<(NodeId, NodeId)> {
        self.edges
            .keys()
            .filter(|(a, b)| !self.edges.contains_key(&(b.clone(), a.clone())))
            .cloned()
            .collect()
    }

    /// Canonical `MAP v1` text.
    pub fn serialize(&self) -> String {
        serialize_map(self)
    }
}

/// Parse `MAP v1` text.
pub fn parse_map(text: &str) -> Result<TopoMap, MapError> {
    let mut map = TopoMap::new();
    let mut saw_header = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw, line_no)?;
        let Some(first) = tokens.first() else {
            continue;
        };
        let syntax = |tok: &Token, message: String| MapError::Syntax {
            line: line_no,
            column: tok.column,
            message,
        };

        if !saw_header {
            if first.text != "MAP" {
                return Err(syntax(first, "expected `MAP v1` header".into()));
            }
            match tokens.get(1) {
                Some(t) if t.text == "v1" => {}
                Some(t) => return Err(syntax(t, format!("unsupported version `{}`", t.text))),
                None => return Err(syntax(first, "missing version after MAP".into())),
            }
            for t in &tokens[2..] {
                match t.text.split_once('=') {
                    Some(("name", v)) if is_token(v) => map.name = Some(v.to_string()),
                    _ => return Err(syntax(t, format!("unexpected header field `{}`", t.text))),
                }
            }
            saw_header = true;
            continue;
        }

        match first.text.as_str() {
            "NODE" => {
                let node = parse_node(&tokens, line_no)?;
                if map.nodes.contains_key(&node.id) {
                    return Err(MapError::DuplicateNode {
                        line: line_no,
                        id: node.id,
                    });
                }
                map.nodes.insert(node.id.clone(), node);
            }
            "EDGE" => {
                let edge = parse_edge(&tokens, line_no)?;
                for id in [&edge.from, &edge.to] {
                    if !map.nodes.contains_key(id) {
                        return Err(MapError::UnknownEdgeEndpoint {
                            line: line_no,
                            id: id.clone(),
                        });
                    }
                }
                let key = (edge.from.clone(), edge.to.clone());
                if map.edges.contains_key(&key) {
                    return Err(MapError::DuplicateEdge {
                        line: line_no,
                        from: edge.from,
                        to: edge.to,
                    });
                }
                map.edges.insert(key, edge);
            }
            "MAP" => return Err(syntax(first, "duplicate MAP header".into())),
            other => return Err(syntax(first, format!("unknown directive `{other}`"))),
        }
    }

    if !saw_header {
        return Err(MapError::Syntax {
            line: 1,
            column: 1,
            message: "empty input, expected `MAP v1` header".into(),
        });
    }
    Ok(map)
}

/// Canonical text: nodes sorted by id, edges by `(from, to)`, minimal
/// decimal reals.
pub fn serialize_map(map: &TopoMap) -> String {
    let mut out = String::from("MAP v1");
    if let Some(name) = &map.name {
        out.push_str(" name=");
        out.push_str(name);
    }
    out.push('\n');
    for n in map.nodes.values() {
        out.push_str(&format!("NODE {} {} {}", n.id, n.position.x, n.position.y));
        for t in &n.tags {
            out.push_str(" tag=");
            out.push_str(t);
        }
        if let Some(label) = &n.label {
            out.push_str(" label=\"");
            for c in label.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
        out.push('\n');
    }
    for e in map.edges.values() {
        out.push_str(&format!(
            "EDGE {} {} dist={} dir={}",
            e.from, e.to, e.distance, e.direction
        ));
        for t in &e.tags {
            out.push_str(" tag=");
            out.push_str(t);
        }
        out.push('\n');
    }
    out
}

struct Token {
    text: String,
    column: usize,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, MapError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let column = i + 1;
        let mut text = String::new();
        let mut in_quotes = false;
        while i < chars.len() {
            let c = chars[i];
            if in_quotes {
                match c {
                    '\\' if i + 1 < chars.len() => {
                        text.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    '"' => in_quotes = false,
                    _ => text.push(c),
                }
            } else if c.is_whitespace() {
                break;
            } else if c == '"' {
                in_quotes = true;
            } else {
                text.push(c);
            }
            i += 1;
        }
        if in_quotes {
            return Err(MapError::Syntax {
                line: line_no,
                column,
                message: "unterminated quoted string".into(),
            });
        }
        tokens.push(Token { text, column });
    }
    Ok(tokens)
}

fn parse_real(tok: &Token, text: &str, line: usize) -> Result<f64, MapError> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(MapError::Syntax {
            line,
            column: tok.column,
            message: format!("expected a finite real, found `{text}`"),
        }),
    }
}

fn parse_id(tok: Option<&Token>, line: usize, what: &str) -> Result<NodeId, MapError> {
    let tok = tok.ok_or_else(|| MapError::Syntax {
        line,
        column: 1,
        message: format!("missing {what}"),
    })?;
    NodeId::new(tok.text.clone()).map_err(|_| MapError::Syntax {
        line,
        column: tok.column,
        message: format!("invalid {what} `{}`", tok.text),
    })
}

fn parse_tag(tok: &Token, value: &str, line: usize) -> Result<String, MapError> {
    let tag = value.to_ascii_lowercase();
    if is_token(&tag) {
        Ok(tag)
    } else {
        Err(MapError::Syntax {
            line,
            column: tok.column,
            message: format!("invalid tag `{value}`"),
        })
    }
}

fn parse_node(tokens: &[Token], line: usize) -> Result<Node, MapError> {
    let id = parse_id(tokens.get(1), line, "node id")?;
    let coord = |i: usize| -> Result<f64, MapError> {
        let tok = tokens.get(i).ok_or_else(|| MapError::Syntax {
            line,
            column: tokens[0].column,
            message: "NODE needs x and y coordinates".into(),
        })?;
        parse_real(tok, &tok.text, line)
    };
    let position = Coordinate::new(coord(2)?, coord(3)?);
    let mut tags = BTreeSet::new();
    let mut label = None;
    for tok in &tokens[4..] {
        match tok.text.split_once('=') {
            Some(("tag", v)) => {
                tags.insert(parse_tag(tok, v, line)?);
            }
            Some(("label", v)) if label.is_none() => label = Some(v.to_string()),
            _ => {
                return Err(MapError::Syntax {
                    line,
                    column: tok.column,
                    message: format!("unexpected NODE field `{}`", tok.text),
                })
            }
        }
    }
    Ok(Node {
        id,
        position,
        tags,
        label,
    })
}

fn parse_edge(tokens: &[Token], line: usize) -> Result<Edge, MapError> {
    let from = parse_id(tokens.get(1), line, "edge source")?;
    let to = parse_id(tokens.get(2), line, "edge target")?;
    let mut distance = None;
    let mut direction = None;
    let mut tags = BTreeSet::new();
    for tok in tokens.iter().skip(3) {
        match tok.text.split_once('=') {
            Some(("dist", v)) if distance.is_none() => {
                let d = parse_real(tok, v, line)?;
                if d <= 0.0 {
                    return Err(MapError::Syntax {
                        line,
                        column: tok.column,
                        message: format!("distance must be positive, found {v}"),
                    });
                }
                distance = Some(d);
            }
            Some(("dir", v)) if direction.is_none() => {
                let h = v.parse::<i64>().ok().and_then(Heading::from_degrees).ok_or_else(|| {
                    MapError::UnquantizedDirection {
                        line,
                        value: v.to_string(),
                    }
                })?;
                direction = Some(h);
            }
            Some(("tag", v)) => {
                tags.insert(parse_tag(tok, v, line)?);
            }
            _ => {
                return Err(MapError::Syntax {
                    line,
                    column: tok.column,
                    message: format!("unexpected EDGE field `{}`", tok.text),
                })
            }
        }
    }
    let missing = |what: &str| MapError::Syntax {
        line,
        column: tokens[0].column,
        message: format!("EDGE is missing `{what}=`"),
    };
    Ok(Edge {
        from,
        to,
        distance: distance.ok_or_else(|| missing("dist"))?,
        direction: direction.ok_or_else(|| missing("dir"))?,
        tags,
        blocked: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "MAP v1\nNODE A 0 0\nNODE B 4 0\nEDGE A B dist=4 dir=0\n";

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    #[test]
    fn parses_minimal_map() {
        let m = parse_map(TWO).unwrap();
        assert_eq!(m.node_count(), 2);
        assert_eq!(m.edge_count(), 1);
        let e = m.edge(&id("A"), &id("B")).unwrap();
        assert_eq!(e.distance, 4.0);
        assert_eq!(e.direction, Heading::EAST);
    }

    #[test]
    fn rejects_unquantized_direction() {
        let err = parse_map("MAP v1\nNODE A 0 0\nNODE B 4 0\nEDGE A B dist=4 dir=45\n").unwrap_err();
        assert!(matches!(err, MapError::UnquantizedDirection { line: 4, .. }), "{err}");
    }

    #[test]
    fn reports_syntax_position() {
        let err = parse_map("MAP v1\nNODE A 0 zero\n").unwrap_err();
        assert_eq!(
            err,
            MapError::Syntax {
                line: 2,
                column: 10,
                message: "expected a finite real, found `zero`".into()
            }
        );
        let err = parse_map("MAP v1\nROOM A\n").unwrap_err();
        assert!(matches!(err, MapError::Syntax { line: 2, column: 1, .. }));
    }

    #[test]
    fn rejects_duplicates_and_dangling_edges() {
        assert!(matches!(
            parse_map("MAP v1\nNODE A 0 0\nNODE A 1 0\n"),
            Err(MapError::DuplicateNode { line: 3, .. })
        ));
        assert!(matches!(
            parse_map("MAP v1\nNODE A 0 0\nEDGE A Z dist=1 dir=0\n"),
            Err(MapError::UnknownEdgeEndpoint { line: 3, .. })
        ));
        assert!(matches!(
            parse_map(&format!("{TWO}EDGE A B dist=4 dir=0\n")),
            Err(MapError::DuplicateEdge { line: 5, .. })
        ));
    }

    #[test]
    fn rejects_nonpositive_distance_and_missing_header() {
        assert!(parse_map("MAP v1\nNODE A 0 0\nNODE B 0 0\nEDGE A B dist=0 dir=0\n").is_err());
        assert!(parse_map("NODE A 0 0\n").is_err());
        assert!(parse_map("").is_err());
        assert!(parse_map("MAP v2\n").is_err());
    }

    #[test]
    fn comments_labels_and_tags() {
        let text =
            "# office\nMAP v1 name=office\nNODE A 0 0 tag=Stairs tag=stairs label=\"Main \\\"lobby\\\"\" # trailing\n";
        let m = parse_map(text).unwrap();
        let a = m.node(&id("A")).unwrap();
        assert_eq!(a.tags.iter().collect::<Vec<_>>(), vec!["stairs"]);
        assert_eq!(a.label.as_deref(), Some("Main \"lobby\""));
        assert_eq!(m.name.as_deref(), Some("office"));
        let again = parse_map(&m.serialize()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn empty_map_serializes_to_header() {
        assert_eq!(serialize_map(&TopoMap::new()), "MAP v1\n");
        assert_eq!(parse_map("MAP v1\n").unwrap(), TopoMap::new());
    }

    #[test]
    fn serialization_is_canonical() {
        let shuffled = "MAP v1\nNODE B 4.50 0\nNODE A 0 0\nEDGE B A dist=4.5 dir=180\nEDGE A B dist=4.500 dir=0\n";
        let m = parse_map(shuffled).unwrap();
        let s = m.serialize();
        assert_eq!(
            s,
            "MAP v1\nNODE A 0 0\nNODE B 4.5 0\nEDGE A B dist=4.5 dir=0\nEDGE B A dist=4.5 dir=180\n"
        );
        assert_eq!(parse_map(&s).unwrap().serialize(), s);
    }

    #[test]
    fn geometry_checks() {
        let ok = parse_map(TWO).unwrap();
        assert!(ok.validate_geometry(DEFAULT_GEOMETRY_TOLERANCE).is_empty());

        let bad = parse_map("MAP v1\nNODE A 0 0\nNODE B 4 0\nEDGE A B dist=5 dir=0\n").unwrap();
        let v = bad.validate_geometry(DEFAULT_GEOMETRY_TOLERANCE);
        assert_eq!(v.len(), 1);
        assert!((v[0].residual - 1.0).abs() < 1e-12);
        assert_eq!(v[0].expected, Coordinate::new(5.0, 0.0));
    }

    #[test]
    fn neighbors_sorted_and_errors() {
        let sq = parse_map(
            "MAP v1\nNODE A 0 0\nNODE B 4 0\nNODE C 4 4\nNODE D 0 4\nNODE E 9 9\n\
             EDGE A D dist=4 dir=90\nEDGE A B dist=4 dir=0\nEDGE B C dist=4 dir=90\nEDGE D C dist=4 dir=0\n",
        )
        .unwrap();
        let n: Vec<_> = sq
            .neighbors(&id("A"))
            .unwrap()
            .iter()
            .map(|e| e.to.to_string())
            .collect();
        assert_eq!(n, ["B", "D"]);
        assert!(sq.neighbors(&id("E")).unwrap().is_empty());
        assert!(matches!(sq.neighbors(&id("Q")), Err(MapError::UnknownNode(_))));
        assert_eq!(sq.missing_reverse_edges().len(), 4);
    }

    #[test]
    fn blocking_touches_both_directions() {
        let mut m = parse_map(&format!("{TWO}EDGE B A dist=4 dir=180\n")).unwrap();
        m.set_edge_blocked(&id("A"), &id("B"), true).unwrap();
        assert!(m.edge(&id("A"), &id("B")).unwrap().blocked);
        assert!(m.edge(&id("B"), &id("A")).unwrap().blocked);
        // the overlay never leaks into the file form
        assert!(!m.serialize().contains("blocked"));
        m.set_edge_blocked(&id("B"), &id("A"), false).unwrap();
        assert!(!m.edge(&id("A"), &id("B")).unwrap().blocked);
        assert!(matches!(
            m.set_edge_blocked(&id("A"), &id("A"), true),
            Err(MapError::UnknownEdge(..))
        ));
    }

    #[test]
    fn heading_rotation() {
        assert_eq!(Heading::EAST.rotate(-1), Heading::SOUTH);
        assert_eq!(Heading::SOUTH.rotate(1), Heading::EAST);
        assert_eq!(Heading::NORTH.reverse(), Heading::SOUTH);
        assert!(Heading::from_degrees(360).is_none());
    }
}
