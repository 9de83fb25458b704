//! Design prototype documents: parsing, validation, traversal, regrouping and
//! canonical serialization.
//!
//! All coordinates and color channels are quantized to six decimal places on
//! parse, which is the precision of the serialized form. Parsing a serialized
//! document therefore reproduces the in-memory prototype exactly.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grouping::MergedGroup;
use crate::{Error, Result};

/// Name of the container inserted around a merged group.
pub const MERGE_NODE_NAME: &str = "#merge#";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Frame {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &Frame) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Smallest frame covering both.
    pub fn union(&self, other: &Frame) -> Frame {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Frame::new(x, y, self.right().max(other.right()) - x, self.bottom().max(other.bottom()) - y)
    }

    pub fn bounding(frames: impl IntoIterator<Item = Frame>) -> Option<Frame> {
        frames.into_iter().reduce(|a, b| a.union(&b))
    }
}

/// Raw color channels in `[0, 255]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rgba {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub a: f64,
}

impl Rgba {
    pub fn new(r: f64, g: f64, b: f64, a: f64) -> Self {
        Self { r, g, b, a }
    }

    pub fn channels(&self) -> [f64; 4] {
        [self.r, self.g, self.b, self.a]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeClass {
    Oval,
    Rectangle,
    Path,
    Text,
    Bitmap,
    Symbol,
    Group,
    /// Any class string outside the known set; the original spelling is kept.
    Unknown(String),
}

impl NodeClass {
    pub const KNOWN: [NodeClass; 7] = [
        NodeClass::Oval,
        NodeClass::Rectangle,
        NodeClass::Path,
        NodeClass::Text,
        NodeClass::Bitmap,
        NodeClass::Symbol,
        NodeClass::Group,
    ];

    /// Vocabulary size for class embeddings: the known classes plus UNK.
    pub const VOCAB: usize = 8;

    pub fn parse(s: &str) -> Self {
        match s {
            "oval" => Self::Oval,
            "rectangle" => Self::Rectangle,
            "path" => Self::Path,
            "text" => Self::Text,
            "bitmap" => Self::Bitmap,
            "symbol" => Self::Symbol,
            "group" => Self::Group,
            other => Self::Unknown(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Oval => "oval",
            Self::Rectangle => "rectangle",
            Self::Path => "path",
            Self::Text => "text",
            Self::Bitmap => "bitmap",
            Self::Symbol => "symbol",
            Self::Group => "group",
            Self::Unknown(s) => s,
        }
    }

    /// Row in the class embedding table; every unknown class shares the last row.
    pub fn index(&self) -> usize {
        match self {
            Self::Oval => 0,
            Self::Rectangle => 1,
            Self::Path => 2,
            Self::Text => 3,
            Self::Bitmap => 4,
            Self::Symbol => 5,
            Self::Group => 6,
            Self::Unknown(_) => 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    StartMerge,
    Merge,
    NonMerge,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::StartMerge, Label::Merge, Label::NonMerge];

    pub fn index(self) -> usize {
        match self {
            Label::StartMerge => 0,
            Label::Merge => 1,
            Label::NonMerge => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::StartMerge => "start-merge",
            Label::Merge => "merge",
            Label::NonMerge => "non-merge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UiNode {
    pub uuid: String,
    pub class: NodeClass,
    pub name: String,
    pub frame: Frame,
    pub color: Option<Rgba>,
    pub label: Option<Label>,
    pub children: Vec<UiNode>,
}

impl UiNode {
    pub fn leaf(uuid: impl Into<String>, class: NodeClass, name: impl Into<String>, frame: Frame) -> Self {
        Self {
            uuid: uuid.into(),
            class,
            name: name.into(),
            frame,
            color: None,
            label: None,
            children: Vec::new(),
        }
    }

    pub fn container(uuid: impl Into<String>, name: impl Into<String>, frame: Frame, children: Vec<UiNode>) -> Self {
        Self { children, ..Self::leaf(uuid, NodeClass::Group, name, frame) }
    }

    /// Elements enter the sequence only as leaves; group nodes are structural
    /// even when empty.
    pub fn is_element(&self) -> bool {
        self.children.is_empty() && self.class != NodeClass::Group
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a UiNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignPrototype {
    pub id: String,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub root: UiNode,
}

/// One leaf of the view hierarchy in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub uuid: String,
    pub class: NodeClass,
    pub name: String,
    pub frame: Frame,
    pub color: Option<Rgba>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ElementSequence {
    pub records: Vec<Element>,
}

impl ElementSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn uuids(&self) -> Vec<String> {
        self.records.iter().map(|e| e.uuid.clone()).collect()
    }

    /// All labels, or `None` if any element is unlabeled.
    pub fn labels(&self) -> Option<Vec<Label>> {
        self.records.iter().map(|e| e.label).collect()
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    canvas: RawCanvas,
    root: RawNode,
}

#[derive(Deserialize)]
struct RawCanvas {
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct RawNode {
    uuid: String,
    class: String,
    name: String,
    frame: Frame,
    #[serde(default)]
    color: Option<[f64; 4]>,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default)]
    children: Vec<RawNode>,
}

fn quantize(v: f64) -> f64 {
    // `+ 0.0` folds negative zero into positive zero.
    (v * 1e6).round() / 1e6 + 0.0
}

fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in input.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(input.len());
        }
        offset += l.len() + 1;
    }
    input.len()
}

/// Parses and validates a prototype document.
pub fn parse_prototype(bytes: &[u8]) -> Result<DesignPrototype> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let parsed = serde_path_to_error::deserialize::<_, RawDocument>(&mut de)
        .map_err(|err| (err.path().to_string(), err.into_inner()))
        .and_then(|doc| de.end().map(|()| doc).map_err(|e| (".".to_string(), e)));
    let raw = match parsed {
        Ok(doc) => doc,
        Err((path, inner)) => {
            return Err(if inner.is_data() {
                Error::Schema { path, message: inner.to_string() }
            } else {
                Error::Parse {
                    offset: byte_offset(bytes, inner.line(), inner.column()),
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                }
            });
        }
    };
    let proto = DesignPrototype {
        id: raw.id,
        canvas_width: quantize(raw.canvas.width),
        canvas_height: quantize(raw.canvas.height),
        root: convert(raw.root),
    };
    validate(&proto)?;
    Ok(proto)
}

fn convert(raw: RawNode) -> UiNode {
    UiNode {
        uuid: raw.uuid,
        class: NodeClass::parse(&raw.class),
        name: raw.name,
        frame: Frame::new(quantize(raw.frame.x), quantize(raw.frame.y), quantize(raw.frame.w), quantize(raw.frame.h)),
        color: raw.color.map(|[r, g, b, a]| Rgba::new(quantize(r), quantize(g), quantize(b), quantize(a))),
        label: raw.label,
        children: raw.children.into_iter().map(convert).collect(),
    }
}

/// Checks canvas size, frame sanity, color ranges and uuid uniqueness.
pub fn validate(proto: &DesignPrototype) -> Result<()> {
    let (w, h) = (proto.canvas_width, proto.canvas_height);
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(Error::Validation(format!("canvas must be positive, got {w}×{h}")));
    }
    let mut seen = HashSet::new();
    let mut problem = None;
    proto.root.visit(&mut |n| {
        if problem.is_some() {
            return;
        }
        let f = n.frame;
        if n.uuid.is_empty() {
            problem = Some("empty uuid".to_string());
        } else if !seen.insert(n.uuid.as_str()) {
            problem = Some(format!("duplicate uuid `{}`", n.uuid));
        } else if ![f.x, f.y, f.w, f.h].iter().all(|v| v.is_finite()) {
            problem = Some(format!("`{}`: non-finite frame", n.uuid));
        } else if f.w < 0.0 || f.h < 0.0 {
            problem = Some(format!("`{}`: negative frame size {}×{}", n.uuid, f.w, f.h));
        } else if let Some(c) = n.color {
            if !c.channels().iter().all(|v| (0.0..=255.0).contains(v)) {
                problem = Some(format!("`{}`: color channel outside [0, 255]", n.uuid));
            }
        }
    });
    match problem {
        Some(p) => Err(Error::Validation(p)),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Traversal

/// Pre-order depth-first flattening of the hierarchy's leaves.
///
/// Explicit leaf labels are carried through. Unlabeled leaves under a
/// `#merge#` container take `start-merge` (first traversed) or `merge`; when a
/// document contains any `#merge#` container, the remaining unlabeled leaves
/// are `non-merge`.
pub fn extract_sequence(proto: &DesignPrototype) -> ElementSequence {
    let mut annotated = false;
    proto.root.visit(&mut |n| annotated |= n.name == MERGE_NODE_NAME);
    let mut records = Vec::new();
    collect(&proto.root, annotated, &mut GroupState::Outside, &mut records);
    ElementSequence { records }
}

/// Position inside a `#merge#` container during traversal.
#[derive(Clone, Copy, PartialEq, Eq)]
enum GroupState {
    Outside,
    First,
    Rest,
}

fn collect(node: &UiNode, annotated: bool, state: &mut GroupState, out: &mut Vec<Element>) {
    if *state == GroupState::Outside && node.name == MERGE_NODE_NAME {
        let mut inner = GroupState::First;
        for child in &node.children {
            collect(child, annotated, &mut inner, out);
        }
        if node.is_element() {
            push_element(node, Some(Label::StartMerge), out);
        }
        return;
    }
    if node.is_element() {
        let derived = match *state {
            GroupState::First => {
                *state = GroupState::Rest;
                Some(Label::StartMerge)
            }
            GroupState::Rest => Some(Label::Merge),
            GroupState::Outside if annotated => Some(Label::NonMerge),
            GroupState::Outside => None,
        };
        push_element(node, derived, out);
        return;
    }
    for child in &node.children {
        collect(child, annotated, state, out);
    }
}

fn push_element(node: &UiNode, derived: Option<Label>, out: &mut Vec<Element>) {
    out.push(Element {
        uuid: node.uuid.clone(),
        class: node.class.clone(),
        name: node.name.clone(),
        frame: node.frame,
        color: node.color,
        label: node.label.or(derived),
    });
}

// ---------------------------------------------------------------------------
// Regrouping

/// Wraps each group in a `#merge#` container attached to the lowest common
/// ancestor of its members. Leaf multiset and leaf traversal order are
/// unchanged; containers emptied by the move are dropped.
pub fn regroup_hierarchy(proto: &DesignPrototype, groups: &[MergedGroup]) -> Result<DesignPrototype> {
    let seq = extract_sequence(proto);
    let position: HashMap<&str, usize> = seq.records.iter().enumerate().map(|(i, e)| (e.uuid.as_str(), i)).collect();
    let mut claimed = vec![false; seq.len()];
    let mut ordered = Vec::with_capacity(groups.len());
    for group in groups {
        if group.members.is_empty() {
            return Err(Error::Contiguity("empty group".into()));
        }
        let mut idx = group
            .members
            .iter()
            .map(|u| position.get(u.as_str()).copied().ok_or_else(|| Error::UnknownUuid(u.clone())))
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        if idx.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Contiguity(format!("members {:?}", group.members)));
        }
        for &i in &idx {
            if std::mem::replace(&mut claimed[i], true) {
                return Err(Error::Contiguity(format!("`{}` belongs to two groups", seq.records[i].uuid)));
            }
        }
        ordered.push(idx.iter().map(|&i| seq.records[i].uuid.clone()).collect::<Vec<_>>());
    }

    let mut out = proto.clone();
    let mut used: HashSet<String> = HashSet::new();
    out.root.visit(&mut |n| {
        used.insert(n.uuid.clone());
    });
    for members in ordered {
        let uuid = fresh_uuid(&format!("merge-{}", members[0]), &mut used);
        wrap_group(&mut out.root, &members, uuid);
    }
    Ok(out)
}

fn fresh_uuid(base: &str, used: &mut HashSet<String>) -> String {
    let mut candidate = base.to_string();
    let mut k = 1;
    while used.contains(&candidate) {
        candidate = format!("{base}-{k}");
        k += 1;
    }
    used.insert(candidate.clone());
    candidate
}

fn paths_to(node: &UiNode, wanted: &HashSet<&str>, path: &mut Vec<usize>, out: &mut HashMap<String, Vec<usize>>) {
    if node.is_element() && wanted.contains(node.uuid.as_str()) {
        out.insert(node.uuid.clone(), path.clone());
    }
    for (i, c) in node.children.iter().enumerate() {
        path.push(i);
        paths_to(c, wanted, path, out);
        path.pop();
    }
}

fn merge_node(uuid: String, members: Vec<UiNode>) -> UiNode {
    let b = Frame::bounding(members.iter().map(|m| m.frame)).unwrap_or_default();
    let frame = Frame::new(quantize(b.x), quantize(b.y), quantize(b.w), quantize(b.h));
    UiNode::container(uuid, MERGE_NODE_NAME, frame, members)
}

fn wrap_group(root: &mut UiNode, members: &[String], uuid: String) {
    let wanted: HashSet<&str> = members.iter().map(String::as_str).collect();
    let mut paths = HashMap::new();
    paths_to(root, &wanted, &mut Vec::new(), &mut paths);

    // The sole leaf is the root itself.
    if paths.get(&members[0]).is_some_and(Vec::is_empty) {
        let old = std::mem::replace(root, UiNode::leaf("", NodeClass::Group, "", Frame::default()));
        *root = merge_node(uuid, vec![old]);
        return;
    }

    let parent_paths: Vec<&[usize]> = members.iter().map(|u| &paths[u][..paths[u].len() - 1]).collect();
    let mut lca: &[usize] = parent_paths[0];
    for p in &parent_paths[1..] {
        let common = lca.iter().zip(p.iter()).take_while(|(a, b)| a == b).count();
        lca = &lca[..common];
    }
    let lca = lca.to_vec();
    let first_child = paths[&members[0]][lca.len()];

    let mut anchor = root;
    for &i in &lca {
        anchor = &mut anchor.children[i];
    }

    let mut moved = Vec::new();
    let old_children = std::mem::take(&mut anchor.children);
    let mut kept = Vec::with_capacity(old_children.len());
    let mut insert_at = None;
    for (i, mut child) in old_children.into_iter().enumerate() {
        let survives = if i < first_child {
            true
        } else if child.is_element() {
            if wanted.contains(child.uuid.as_str()) {
                moved.push(child);
                if i == first_child {
                    insert_at = Some(kept.len());
                }
                continue;
            }
            true
        } else {
            let had_children = !child.children.is_empty();
            take_members(&mut child, &wanted, &mut moved);
            !(had_children && child.children.is_empty())
        };
        if i == first_child {
            insert_at = Some(if survives { kept.len() + 1 } else { kept.len() });
        }
        if survives {
            kept.push(child);
        }
    }
    let at = insert_at.unwrap_or(kept.len());
    kept.insert(at, merge_node(uuid, moved));
    anchor.children = kept;
}

/// Moves member leaves out of `node`'s subtree in traversal order, dropping
/// containers that lose all their children.
fn take_members(node: &mut UiNode, wanted: &HashSet<&str>, moved: &mut Vec<UiNode>) {
    let children = std::mem::take(&mut node.children);
    for mut child in children {
        if child.is_element() {
            if wanted.contains(child.uuid.as_str()) {
                moved.push(child);
            } else {
                node.children.push(child);
            }
            continue;
        }
        let had_children = !child.children.is_empty();
        take_members(&mut child, wanted, moved);
        if !(had_children && child.children.is_empty()) {
            node.children.push(child);
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization

fn write_num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.6}");
}

fn write_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

fn write_node(out: &mut String, n: &UiNode) {
    out.push_str("{\"children\":[");
    for (i, c) in n.children.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_node(out, c);
    }
    out.push_str("],\"class\":");
    write_str(out, n.class.as_str());
    out.push_str(",\"color\":");
    match n.color {
        Some(c) => {
            out.push('[');
            for (i, v) in c.channels().into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_num(out, v);
            }
            out.push(']');
        }
        None => out.push_str("null"),
    }
    let f = n.frame;
    out.push_str(",\"frame\":{\"h\":");
    write_num(out, f.h);
    out.push_str(",\"w\":");
    write_num(out, f.w);
    out.push_str(",\"x\":");
    write_num(out, f.x);
    out.push_str(",\"y\":");
    write_num(out, f.y);
    out.push('}');
    if let Some(l) = n.label {
        out.push_str(",\"label\":");
        write_str(out, l.as_str());
    }
    out.push_str(",\"name\":");
    write_str(out, &n.name);
    out.push_str(",\"uuid\":");
    write_str(out, &n.uuid);
    out.push('}');
}

/// Canonical JSON: sorted keys, six-decimal floats, `null` for absent color,
/// no `label` key for unlabeled nodes.
pub fn serialize_prototype(proto: &DesignPrototype) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\"canvas\":{\"height\":");
    write_num(&mut out, proto.canvas_height);
    out.push_str(",\"width\":");
    write_num(&mut out, proto.canvas_width);
    out.push_str("},\"id\":");
    write_str(&mut out, &proto.id);
    out.push_str(",\"root\":");
    write_node(&mut out, &proto.root);
    out.push_str("}\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(uuid: &str) -> UiNode {
        UiNode::leaf(uuid, NodeClass::Rectangle, uuid, Frame::new(0.0, 0.0, 10.0, 10.0))
    }

    fn doc(root: UiNode) -> DesignPrototype {
        DesignPrototype { id: "t".into(), canvas_width: 100.0, canvas_height: 100.0, root }
    }

    fn uuids(p: &DesignPrototype) -> Vec<String> {
        extract_sequence(p).uuids()
    }

    #[test]
    fn minimal_document_parses() {
        let json = br#"{"id":"a","canvas":{"width":100,"height":100},
            "root":{"uuid":"r","class":"rectangle","name":"bg","frame":{"x":0,"y":0,"w":100,"h":100},"color":null,"children":[]}}"#;
        let p = parse_prototype(json).unwrap();
        let seq = extract_sequence(&p);
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.records[0].color, None);
        assert_eq!(seq.records[0].label, None);
    }

    #[test]
    fn truncated_json_reports_offset() {
        let json = br#"{"id":"a","canvas":{"width":100,"#;
        match parse_prototype(json) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= json.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_names_its_path() {
        let json = br#"{"id":"a","canvas":{"width":100,"height":100},
            "root":{"uuid":"r","class":"group","name":"","frame":{"x":0,"y":0,"w":1,"h":1},
            "children":[{"uuid":"c","class":"oval","name":"","color":null}]}}"#;
        match parse_prototype(json) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "root.children[0]");
                assert!(message.contains("frame"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_size_and_duplicate_uuid_are_rejected() {
        let neg = br#"{"id":"a","canvas":{"width":100,"height":100},
            "root":{"uuid":"r","class":"oval","name":"","frame":{"x":0,"y":0,"w":-1,"h":1}}}"#;
        assert!(matches!(parse_prototype(neg), Err(Error::Validation(_))));
        let dup = doc(UiNode::container("r", "", Frame::default(), vec![leaf("a"), leaf("a")]));
        assert!(matches!(validate(&dup), Err(Error::Validation(m)) if m.contains("duplicate")));
    }

    #[test]
    fn unknown_class_maps_to_unk_row() {
        assert_eq!(NodeClass::parse("artboard").index(), NodeClass::VOCAB - 1);
        assert_eq!(NodeClass::parse("artboard").as_str(), "artboard");
    }

    #[test]
    fn preorder_leaves_only() {
        let root = UiNode::container(
            "root",
            "",
            Frame::default(),
            vec![UiNode::container("A", "", Frame::default(), vec![leaf("B"), leaf("C")]), leaf("D")],
        );
        assert_eq!(uuids(&doc(root)), ["B", "C", "D"]);
    }

    #[test]
    fn merge_annotation_derives_labels() {
        let root = UiNode::container(
            "root",
            "",
            Frame::default(),
            vec![leaf("x"), UiNode::container("g", MERGE_NODE_NAME, Frame::default(), vec![leaf("m1"), leaf("m2")])],
        );
        let labels = extract_sequence(&doc(root)).labels().unwrap();
        assert_eq!(labels, [Label::NonMerge, Label::StartMerge, Label::Merge]);
    }

    #[test]
    fn regroup_wraps_adjacent_siblings() {
        let root = UiNode::container("root", "", Frame::default(), vec![leaf("a"), leaf("b"), leaf("c")]);
        let p = doc(root);
        let out = regroup_hierarchy(&p, &[MergedGroup::predicted(["a", "b"])]).unwrap();
        assert_eq!(out.root.children.len(), 2);
        let m = &out.root.children[0];
        assert_eq!(m.name, MERGE_NODE_NAME);
        assert_eq!(m.class, NodeClass::Group);
        assert_eq!(m.color, None);
        assert_eq!(m.children.iter().map(|c| c.uuid.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(uuids(&out), uuids(&p));
    }

    #[test]
    fn regroup_across_branches_attaches_at_common_ancestor() {
        let mut b = leaf("B");
        b.frame = Frame::new(5.0, 5.0, 10.0, 10.0);
        let mut d = leaf("D");
        d.frame = Frame::new(40.0, 30.0, 20.0, 5.0);
        let root = UiNode::container(
            "root",
            "",
            Frame::default(),
            vec![
                UiNode::container("A", "", Frame::default(), vec![leaf("Z"), b]),
                UiNode::container("E", "", Frame::default(), vec![d, leaf("F")]),
            ],
        );
        let p = doc(root);
        let out = regroup_hierarchy(&p, &[MergedGroup::predicted(["B", "D"])]).unwrap();
        assert_eq!(uuids(&out), uuids(&p));
        let names: Vec<&str> = out.root.children.iter().map(|c| c.uuid.as_str()).collect();
        assert_eq!(names, ["A", "merge-B", "E"]);
        assert_eq!(out.root.children[1].frame, Frame::new(5.0, 5.0, 55.0, 30.0));
    }

    #[test]
    fn regroup_drops_emptied_containers_and_rejects_bad_groups() {
        let root = UiNode::container(
            "root",
            "",
            Frame::default(),
            vec![leaf("a"), UiNode::container("S", "", Frame::default(), vec![leaf("b")]), leaf("c")],
        );
        let p = doc(root);
        let out = regroup_hierarchy(&p, &[MergedGroup::predicted(["b", "c"])]).unwrap();
        assert_eq!(out.root.children.len(), 2);
        assert_eq!(uuids(&out), ["a", "b", "c"]);
        assert!(matches!(regroup_hierarchy(&p, &[MergedGroup::predicted(["a", "c"])]), Err(Error::Contiguity(_))));
        assert!(matches!(regroup_hierarchy(&p, &[MergedGroup::predicted(["nope"])]), Err(Error::UnknownUuid(_))));
        assert_eq!(regroup_hierarchy(&p, &[]).unwrap(), p);
    }

    #[test]
    fn serialization_is_canonical() {
        let mut l = leaf("a");
        l.color = Some(Rgba::new(1.0, 2.5, 3.0, 255.0));
        l.label = Some(Label::Merge);
        let p = doc(UiNode::container("root", "page", Frame::new(0.0, 0.0, 100.0, 100.0), vec![l, leaf("b")]));
        let bytes = serialize_prototype(&p);
        assert_eq!(bytes, serialize_prototype(&p));
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("\"color\":null"));
        assert!(text.contains("\"label\":\"merge\""));
        assert!(text.contains("\"x\":0.000000"));
        assert_eq!(parse_prototype(&bytes).unwrap(), p);
    }
}
