//! Synthetic labeled prototypes with fragmented icon, decoration and
//! background groups.
//!
//! Each prototype is a mobile screen built from rows: plain rows hold only
//! non-merge elements, group rows hold one or more fragmented groups plus a
//! few non-merge companions. The number of groups is drawn so the expected
//! merged to non-merge element ratio equals the configured target.

mod dataset;
mod raster;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grouping::StrataFlags;
use crate::proto::{extract_sequence, DesignPrototype, Frame, Label, NodeClass, Rgba, UiNode};
use crate::{Error, Result};

pub use dataset::{
    generate_dataset, label_counts, load_manifest, read_images, save_manifest, split_dataset, write_dataset,
    DatasetManifest, LabelCounts, ALL_SPLIT, SPLIT_NAMES,
};
pub(crate) use raster::fnv1a;
pub use raster::{path_shape, rasterize_element, rasterize_record, Image64, PathShape, IMAGE_CHANNELS, IMAGE_LEN, IMAGE_SIDE};

pub const CANVAS_WIDTH: f64 = 375.0;
pub const CANVAS_HEIGHT: f64 = 812.0;
/// Elements narrower and shorter than this many pixels are tiny.
pub const TINY_SIDE: f64 = 32.0;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }

    fn intersect(&self, other: Span) -> Option<Span> {
        let s = Span::new(self.min.max(other.min), self.max.min(other.max));
        (s.min <= s.max).then_some(s)
    }

    fn mean(&self) -> f64 {
        (self.min + self.max) as f64 / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_prototypes: usize,
    pub elements_per_prototype: Span,
    pub group_count: Span,
    pub group_size: Span,
    pub tiny_fraction: f64,
    pub overlap_fraction: f64,
    pub target_merge_ratio: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_prototypes: 500,
            elements_per_prototype: Span::new(16, 40),
            group_count: Span::new(0, 4),
            group_size: Span::new(2, 6),
            tiny_fraction: 0.5,
            overlap_fraction: 0.2,
            target_merge_ratio: 0.125,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, s) in [
            ("elements_per_prototype", self.elements_per_prototype),
            ("group_count", self.group_count),
            ("group_size", self.group_size),
        ] {
            if s.min > s.max {
                return bad(format!("{name} range is empty ({}..={})", s.min, s.max));
            }
        }
        if self.group_size.min < 2 {
            return bad("group_size must be at least 2".into());
        }
        if self.group_size.min > self.elements_per_prototype.min {
            return bad(format!(
                "group_size {} exceeds elements_per_prototype {}",
                self.group_size.min, self.elements_per_prototype.min
            ));
        }
        for (name, f) in [("tiny_fraction", self.tiny_fraction), ("overlap_fraction", self.overlap_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if !(self.target_merge_ratio.is_finite() && self.target_merge_ratio > 0.0) {
            return bad(format!("target_merge_ratio must be positive, got {}", self.target_merge_ratio));
        }
        Ok(())
    }

    /// Expected group size under the archetype mix.
    fn mean_group_size(&self) -> f64 {
        Archetype::ALL.iter().map(|a| a.weight() * a.sizes(self.group_size).mean()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Archetype {
    Icon,
    Decoration,
    Background,
}

impl Archetype {
    const ALL: [Archetype; 3] = [Archetype::Icon, Archetype::Decoration, Archetype::Background];

    fn weight(self) -> f64 {
        match self {
            Archetype::Icon => 0.5,
            Archetype::Decoration => 0.3,
            Archetype::Background => 0.2,
        }
    }

    fn sizes(self, allowed: Span) -> Span {
        let own = match self {
            Archetype::Icon => Span::new(2, 6),
            Archetype::Decoration => Span::new(2, 5),
            Archetype::Background => Span::new(2, 4),
        };
        own.intersect(allowed).unwrap_or(allowed)
    }
}

#[derive(Clone, Copy, Debug)]
struct GroupSpec {
    archetype: Archetype,
    size: usize,
    tiny: bool,
}

#[derive(Clone, Copy, Debug)]
enum Filler {
    Text,
    Avatar,
    Image,
    Button,
    Tabs,
    Symbol,
}

enum RowPlan {
    Groups { groups: Vec<GroupSpec>, companions: usize },
    Filler { kind: Filler, count: usize },
}

const BRAND: [(f64, f64, f64); 8] = [
    (0.0, 122.0, 255.0),
    (52.0, 199.0, 89.0),
    (255.0, 59.0, 48.0),
    (255.0, 149.0, 0.0),
    (175.0, 82.0, 222.0),
    (90.0, 200.0, 250.0),
    (255.0, 204.0, 0.0),
    (88.0, 86.0, 214.0),
];
const INK: [(f64, f64, f64); 3] = [(0.0, 0.0, 0.0), (60.0, 60.0, 67.0), (142.0, 142.0, 147.0)];
const SURFACES: [(f64, f64, f64); 3] = [(242.0, 242.0, 247.0), (255.0, 255.0, 255.0), (229.0, 229.0, 234.0)];

const TEXTS: [&str; 30] = [
    "Settings", "Profile", "Notifications", "Privacy", "Messages", "Order history", "Payment methods",
    "Help center", "Log out", "Today", "Recommended for you", "See all", "Free shipping", "$12.99",
    "4.8 rating", "Add to cart", "Buy now", "Continue", "Sign in", "Search", "Home", "Cart", "Me",
    "Discover", "New arrivals", "Flash sale", "Coupons", "12:30", "Follow", "Share",
];
const GLYPH_NAMES: [&str; 9] = ["icon/arrow", "chevron", "path", "icon", "arrow right", "search", "close", "more", "icon/back"];
const ICON_PATH_NAMES: [&str; 6] = ["path", "combined shape", "vector", "stroke", "fill", "shape"];
const ICON_OVAL_NAMES: [&str; 4] = ["oval", "circle", "shape", "oval copy"];
const ICON_RECT_NAMES: [&str; 4] = ["rectangle", "shape", "rectangle copy", "bg"];
const DECORATION_NAMES: [&str; 8] = ["decoration", "blob", "oval", "mask", "path", "rectangle", "shape", "sparkle"];
const BACKGROUND_BASE_NAMES: [&str; 4] = ["bg", "background", "rectangle", "mask"];
const BACKGROUND_LAYER_NAMES: [&str; 6] = ["overlay", "path", "gradient", "shadow", "rectangle", "wave"];
const ICON_CONTAINER_NAMES: [&str; 6] = ["icon/home", "icon/user", "icon/bell", "icon/cart", "icon/gift", "icon/star"];

/// Generates the configured number of prototypes in memory.
pub fn generate(config: &GenConfig) -> Result<Vec<DesignPrototype>> {
    config.validate()?;
    Ok((0..config.n_prototypes).map(|i| generate_one(config, i)).collect())
}

/// Generates prototype `index` of the corpus described by `config`. The
/// result depends only on the configuration and the index.
pub fn generate_one(config: &GenConfig, index: usize) -> DesignPrototype {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    Builder { rng, config, used: HashSet::new() }.prototype(format!("proto-{index:05}"))
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    config: &'a GenConfig,
    used: HashSet<String>,
}

impl Builder<'_> {
    fn prototype(mut self, id: String) -> DesignPrototype {
        let cfg = self.config;
        let total = cfg.elements_per_prototype.sample(&mut self.rng);
        let r = cfg.target_merge_ratio;
        let expected_groups = total as f64 * r / (1.0 + r) / cfg.mean_group_size();
        let mut k = expected_groups.floor() as usize + usize::from(self.rng.gen_bool(expected_groups.fract()));
        k = k.clamp(cfg.group_count.min, cfg.group_count.max);

        let mut groups: Vec<GroupSpec> = (0..k).map(|_| self.group_spec()).collect();
        while groups.iter().map(|g| g.size).sum::<usize>() + 1 > total && !groups.is_empty() {
            groups.pop();
        }
        let mut budget = total - groups.iter().map(|g| g.size).sum::<usize>();

        let mut rows: Vec<RowPlan> = Vec::new();
        for (j, g) in groups.into_iter().enumerate() {
            let joins = j > 0 && g.archetype != Archetype::Background && self.rng.gen_bool(cfg.overlap_fraction);
            match rows.last_mut() {
                Some(RowPlan::Groups { groups, .. }) if joins => groups.push(g),
                _ => rows.push(RowPlan::Groups { groups: vec![g], companions: 0 }),
            }
        }

        let mut children = Vec::new();
        let mut y = 0.0;
        if budget >= 3 && self.rng.gen_bool(0.85) {
            children.push(self.status_bar());
            budget -= 3;
            y = 44.0;
        }
        if budget >= 2 && self.rng.gen_bool(0.7) {
            children.push(self.nav_bar(y));
            budget -= 2;
            y += 44.0;
        }
        for row in rows.iter_mut() {
            if let RowPlan::Groups { companions, .. } = row {
                *companions = self.rng.gen_range(1..=3).min(budget);
                budget -= *companions;
            }
        }
        while budget > 0 {
            let count = self.rng.gen_range(1..=4).min(budget);
            let kind = *[Filler::Text, Filler::Text, Filler::Avatar, Filler::Image, Filler::Button, Filler::Tabs, Filler::Symbol]
                .choose(&mut self.rng)
                .unwrap();
            rows.push(RowPlan::Filler { kind, count });
            budget -= count;
        }
        rows.shuffle(&mut self.rng);

        for row in rows {
            let (node, height) = match row {
                RowPlan::Groups { groups, companions } => self.group_row(y, &groups, companions),
                RowPlan::Filler { kind, count } => self.filler_row(y, kind, count),
            };
            children.push(node);
            y += height;
        }

        let canvas_height = CANVAS_HEIGHT.max(y + 34.0);
        let root = UiNode::container(self.uuid(), "Screen", Frame::new(0.0, 0.0, CANVAS_WIDTH, canvas_height), children);
        DesignPrototype { id, canvas_width: CANVAS_WIDTH, canvas_height, root }
    }

    fn group_spec(&mut self) -> GroupSpec {
        let roll: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut archetype = Archetype::Background;
        for a in Archetype::ALL {
            acc += a.weight();
            if roll < acc {
                archetype = a;
                break;
            }
        }
        let size = archetype.sizes(self.config.group_size).sample(&mut self.rng);
        let tiny = archetype != Archetype::Background && self.rng.gen_bool(self.config.tiny_fraction);
        GroupSpec { archetype, size, tiny }
    }

    // -- primitives ---------------------------------------------------------

    fn uuid(&mut self) -> String {
        loop {
            let v: u128 = self.rng.gen();
            let s = format!(
                "{:08X}-{:04X}-{:04X}-{:04X}-{:012X}",
                (v >> 96) as u32,
                (v >> 80) as u16,
                (v >> 64) as u16,
                (v >> 48) as u16,
                v as u64 & 0xFFFF_FFFF_FFFF
            );
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }

    /// A uuid whose path outline is (or is not) a fragment-like shape.
    fn path_uuid(&mut self, fragment: bool) -> String {
        loop {
            let s = self.uuid();
            if path_shape(&s).is_fragment() == fragment {
                return s;
            }
            self.used.remove(&s);
        }
    }

    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(&mut self.rng).unwrap()
    }

    fn color(&mut self, palette: &[(f64, f64, f64)], alpha: f64) -> Option<Rgba> {
        if self.rng.gen_bool(0.08) {
            return None;
        }
        let (r, g, b) = self.pick(palette);
        Some(Rgba::new(r, g, b, alpha))
    }

    fn leaf(&mut self, class: NodeClass, name: &str, frame: Frame, color: Option<Rgba>, label: Label) -> UiNode {
        let uuid = match class {
            // Group members mostly get fragment outlines, standalone paths
            // mostly complete glyphs.
            NodeClass::Path => {
                let fragment = (label != Label::NonMerge) == self.rng.gen_bool(0.85);
                self.path_uuid(fragment)
            }
            _ => self.uuid(),
        };
        let frame = Frame::new(frame.x.round(), frame.y.round(), frame.w.round().max(1.0), frame.h.round().max(1.0));
        UiNode { color, label: Some(label), ..UiNode::leaf(uuid, class, name, frame) }
    }

    fn text(&mut self, x: f64, y: f64, w: f64, h: f64) -> UiNode {
        let name = self.pick(&TEXTS);
        let color = self.color(&INK, 255.0);
        self.leaf(NodeClass::Text, name, Frame::new(x, y, w, h), color, Label::NonMerge)
    }

    fn glyph(&mut self, x: f64, y: f64, side: f64) -> UiNode {
        let name = self.pick(&GLYPH_NAMES);
        let color = self.color(&[INK[1], INK[2], BRAND[0]], 255.0);
        let h = side * self.rng.gen_range(0.8..1.2);
        self.leaf(NodeClass::Path, name, Frame::new(x, y, side, h), color, Label::NonMerge)
    }

    fn rect(&mut self, name: &str, frame: Frame, palette: &[(f64, f64, f64)]) -> UiNode {
        let color = self.color(palette, 255.0);
        self.leaf(NodeClass::Rectangle, name, frame, color, Label::NonMerge)
    }

    fn row_container(&mut self, name: &str, frame: Frame, children: Vec<UiNode>) -> UiNode {
        UiNode::container(self.uuid(), name, frame, children)
    }

    // -- fixed bars ---------------------------------------------------------

    fn status_bar(&mut self) -> UiNode {
        let time = self.leaf(NodeClass::Text, "9:41", Frame::new(21.0, 14.0, 54.0, 18.0), Some(Rgba::new(0.0, 0.0, 0.0, 255.0)), Label::NonMerge);
        let signal = self.glyph(292.0, 17.0, 17.0);
        let battery = self.rect("battery", Frame::new(330.0, 17.0, 25.0, 12.0), &INK);
        self.row_container("Status Bar", Frame::new(0.0, 0.0, CANVAS_WIDTH, 44.0), vec![time, signal, battery])
    }

    fn nav_bar(&mut self, y: f64) -> UiNode {
        let back = self.glyph(16.0, y + 12.0, 14.0);
        let title = self.text(120.0, y + 11.0, 135.0, 22.0);
        self.row_container("Nav Bar", Frame::new(0.0, y, CANVAS_WIDTH, 44.0), vec![back, title])
    }

    // -- groups -------------------------------------------------------------

    /// Labels a finished member list: the first traversed member starts the group.
    fn label_members(mut members: Vec<UiNode>) -> Vec<UiNode> {
        for (i, m) in members.iter_mut().enumerate() {
            m.label = Some(if i == 0 { Label::StartMerge } else { Label::Merge });
        }
        members
    }

    fn largest_first(mut members: Vec<UiNode>) -> Vec<UiNode> {
        members.sort_by(|a, b| b.frame.area().total_cmp(&a.frame.area()));
        members
    }

    fn icon(&mut self, x: f64, y: f64, side: f64, size: usize) -> Vec<UiNode> {
        let tint = self.color(&BRAND, 255.0);
        let mut members = Vec::with_capacity(size);
        let with_base = self.rng.gen_bool(0.7);
        if with_base {
            let (class, names) = if self.rng.gen_bool(0.5) {
                (NodeClass::Oval, &ICON_OVAL_NAMES[..])
            } else {
                (NodeClass::Rectangle, &ICON_RECT_NAMES[..])
            };
            let name = self.pick(names);
            members.push(self.leaf(class, name, Frame::new(x, y, side, side), tint, Label::Merge));
        }
        let ink = if with_base { Some(Rgba::new(255.0, 255.0, 255.0, 255.0)) } else { tint };
        let scale = if with_base { 0.7 } else { 0.95 };
        while members.len() < size {
            let w = side * self.rng.gen_range(0.25..scale);
            let h = side * self.rng.gen_range(0.25..scale);
            let fx = x + self.rng.gen_range(0.0..=(side - w));
            let fy = y + self.rng.gen_range(0.0..=(side - h));
            let roll: f64 = self.rng.gen();
            let (class, names) = if roll < 0.6 {
                (NodeClass::Path, &ICON_PATH_NAMES[..])
            } else if roll < 0.8 {
                (NodeClass::Oval, &ICON_OVAL_NAMES[..])
            } else {
                (NodeClass::Rectangle, &ICON_RECT_NAMES[..])
            };
            let name = self.pick(names);
            members.push(self.leaf(class, name, Frame::new(fx, fy, w, h), ink, Label::Merge));
        }
        Self::label_members(Self::largest_first(members))
    }

    fn decoration(&mut self, cx: f64, cy: f64, tiny: bool, size: usize) -> Vec<UiNode> {
        let (lo, hi) = if tiny { (6.0, 28.0) } else { (16.0, 72.0) };
        let members = (0..size)
            .map(|_| {
                let w: f64 = self.rng.gen_range(lo..hi);
                let h: f64 = self.rng.gen_range(lo..hi);
                let jx = self.rng.gen_range(-0.5..0.5) * w;
                let jy = self.rng.gen_range(-0.5..0.5) * h;
                let roll: f64 = self.rng.gen();
                let class = if roll < 0.4 {
                    NodeClass::Oval
                } else if roll < 0.7 {
                    NodeClass::Path
                } else {
                    NodeClass::Rectangle
                };
                let name = self.pick(&DECORATION_NAMES);
                let alpha = self.rng.gen_range(100.0f64..=255.0).round();
                let color = self.color(&BRAND, alpha);
                self.leaf(class, name, Frame::new((cx - w / 2.0 + jx).max(0.0), (cy - h / 2.0 + jy).max(0.0), w, h), color, Label::Merge)
            })
            .collect();
        Self::label_members(Self::largest_first(members))
    }

    fn background(&mut self, area: Frame, size: usize) -> Vec<UiNode> {
        let base_name = self.pick(&BACKGROUND_BASE_NAMES);
        let base_color = self.color(&BRAND, 255.0);
        let base = self.leaf(NodeClass::Rectangle, base_name, area, base_color, Label::Merge);
        let layers: Vec<UiNode> = (1..size)
            .map(|_| {
                let w = area.w * self.rng.gen_range(0.4..0.95);
                let h = area.h * self.rng.gen_range(0.3..0.95);
                let x = if self.rng.gen_bool(0.5) { area.x } else { area.right() - w };
                let y = if self.rng.gen_bool(0.5) { area.y } else { area.bottom() - h };
                let class = if self.rng.gen_bool(0.5) { NodeClass::Path } else { NodeClass::Rectangle };
                let name = self.pick(&BACKGROUND_LAYER_NAMES);
                let alpha = self.rng.gen_range(60.0f64..=160.0).round();
                let color = self.color(&SURFACES, alpha);
                self.leaf(class, name, Frame::new(x, y, w, h), color, Label::Merge)
            })
            .collect();
        let mut members = vec![base];
        members.extend(Self::largest_first(layers));
        Self::label_members(members)
    }

    /// Members of a group that sits on top of `anchor`, the bounding box of
    /// an earlier group, so their boxes intersect.
    fn overlapping(&mut self, g: &GroupSpec, anchor: Frame) -> Vec<UiNode> {
        let cx = anchor.x + anchor.w * self.rng.gen_range(0.2..0.8);
        let cy = anchor.y + anchor.h * self.rng.gen_range(0.2..0.8);
        match g.archetype {
            Archetype::Icon => {
                let side = self.icon_side(g.tiny);
                self.icon((cx - side / 2.0).max(0.0).round(), (cy - side / 2.0).max(0.0).round(), side, g.size)
            }
            _ => self.decoration(cx, cy, g.tiny, g.size),
        }
    }

    fn icon_side(&mut self, tiny: bool) -> f64 {
        if tiny {
            self.rng.gen_range(16..=28) as f64
        } else {
            self.rng.gen_range(36..=56) as f64
        }
    }

    fn group_row(&mut self, y: f64, groups: &[GroupSpec], companions: usize) -> (UiNode, f64) {
        let first = groups[0];
        let (mut members, container, row_frame) = match first.archetype {
            Archetype::Icon => {
                let side = self.icon_side(first.tiny);
                let h = (side + 24.0).max(56.0);
                let left = self.rng.gen_bool(0.6);
                let x = if left { 16.0 } else { CANVAS_WIDTH - 16.0 - side };
                let members = self.icon(x, y + ((h - side) / 2.0).round(), side, first.size);
                (members, "List Item", Frame::new(0.0, y, CANVAS_WIDTH, h))
            }
            Archetype::Decoration => {
                let h = self.rng.gen_range(110..=160) as f64;
                let cx = CANVAS_WIDTH - 16.0 - self.rng.gen_range(30.0..90.0);
                let cy = y + self.rng.gen_range(30.0..(h - 30.0));
                let members = self.decoration(cx, cy, first.tiny, first.size);
                (members, "Card", Frame::new(16.0, y, CANVAS_WIDTH - 32.0, h))
            }
            Archetype::Background => {
                let h = self.rng.gen_range(120..=180) as f64;
                let area = Frame::new(16.0, y, CANVAS_WIDTH - 32.0, h);
                (self.background(area, first.size), "Banner", area)
            }
        };
        let mut anchor = Frame::bounding(members.iter().map(|m| m.frame)).unwrap();
        let nest = first.archetype == Archetype::Icon && self.rng.gen_bool(0.5);
        let mut group_nodes = Vec::new();
        let push_group = |this: &mut Self, members: Vec<UiNode>, nest: bool, out: &mut Vec<UiNode>| {
            if nest {
                let bbox = Frame::bounding(members.iter().map(|m| m.frame)).unwrap();
                let name = this.pick(&ICON_CONTAINER_NAMES);
                out.push(UiNode::container(this.uuid(), name, bbox, members));
            } else {
                out.extend(members);
            }
        };
        push_group(self, std::mem::take(&mut members), nest, &mut group_nodes);
        for g in &groups[1..] {
            let extra = self.overlapping(g, anchor);
            anchor = Frame::bounding(extra.iter().map(|m| m.frame)).unwrap();
            let nest = g.archetype == Archetype::Icon && self.rng.gen_bool(0.5);
            push_group(self, extra, nest, &mut group_nodes);
        }

        let f = row_frame;
        let mut companions_nodes = Vec::new();
        let mut children = Vec::new();
        match first.archetype {
            Archetype::Icon => {
                let label_x = if anchor.x < CANVAS_WIDTH / 2.0 { anchor.right() + 12.0 } else { 16.0 };
                for c in 0..companions {
                    let node = match c {
                        0 => self.text(label_x, f.y + f.h / 2.0 - 10.0, 180.0, 20.0),
                        1 => self.glyph(CANVAS_WIDTH - 30.0, f.y + f.h / 2.0 - 7.0, 9.0),
                        _ => self.rect("divider", Frame::new(16.0, f.bottom() - 1.0, CANVAS_WIDTH - 32.0, 1.0), &SURFACES),
                    };
                    companions_nodes.push(node);
                }
                if self.rng.gen_bool(0.5) {
                    children.extend(group_nodes);
                    children.extend(companions_nodes);
                } else {
                    let mut rest = companions_nodes.into_iter();
                    children.extend(rest.next());
                    children.extend(group_nodes);
                    children.extend(rest);
                }
            }
            Archetype::Decoration => {
                for c in 0..companions {
                    let node = match c {
                        0 => {
                            let name = self.pick(&["card", "bg", "rectangle", "card bg"]);
                            self.rect(name, f, &SURFACES)
                        }
                        1 => self.text(f.x + 16.0, f.y + 16.0, 160.0, 22.0),
                        _ => self.text(f.x + 16.0, f.y + 46.0, 200.0, 36.0),
                    };
                    companions_nodes.push(node);
                }
                let mut rest = companions_nodes.into_iter();
                children.extend(rest.next());
                if self.rng.gen_bool(0.5) {
                    children.extend(group_nodes);
                    children.extend(rest);
                } else {
                    children.extend(rest.next());
                    children.extend(group_nodes);
                    children.extend(rest);
                }
            }
            Archetype::Background => {
                children.extend(group_nodes);
                for c in 0..companions {
                    let node = match c {
                        0 => self.text(f.x + 16.0, f.y + 16.0, 200.0, 24.0),
                        1 => {
                            let name = self.pick(&["button", "rectangle", "btn"]);
                            self.rect(name, Frame::new(f.x + 16.0, f.bottom() - 52.0, 120.0, 36.0), &SURFACES)
                        }
                        _ => self.text(f.x + 28.0, f.bottom() - 44.0, 96.0, 20.0),
                    };
                    children.push(node);
                }
            }
        }
        let name = self.pick(&[container, "Section", "Group"]);
        (self.row_container(name, row_frame, children), row_frame.h + 8.0)
    }

    fn filler_row(&mut self, y: f64, kind: Filler, count: usize) -> (UiNode, f64) {
        let (name, h) = match kind {
            Filler::Text => ("Cell", 56.0),
            Filler::Avatar => ("User", 64.0),
            Filler::Image => ("Media", 180.0),
            Filler::Button => ("Action", 64.0),
            Filler::Tabs => ("Tab Bar", 56.0),
            Filler::Symbol => ("Footer", 40.0),
        };
        let mid = y + h / 2.0;
        let children: Vec<UiNode> = (0..count)
            .map(|c| match (kind, c) {
                (Filler::Text, 0) => self.text(16.0, mid - 18.0, 200.0, 20.0),
                (Filler::Text, 1) => self.text(16.0, mid + 4.0, 240.0, 16.0),
                (Filler::Text, 2) => self.glyph(CANVAS_WIDTH - 30.0, mid - 7.0, 9.0),
                (Filler::Avatar, 0) => {
                    let name = self.pick(&["avatar", "oval", "profile photo"]);
                    let color = self.color(&SURFACES, 255.0);
                    self.leaf(NodeClass::Oval, name, Frame::new(16.0, mid - 20.0, 40.0, 40.0), color, Label::NonMerge)
                }
                (Filler::Avatar, 1) => self.text(68.0, mid - 18.0, 160.0, 20.0),
                (Filler::Avatar, 2) => self.text(CANVAS_WIDTH - 76.0, mid - 8.0, 60.0, 16.0),
                (Filler::Image, 0) => {
                    let name = self.pick(&["photo", "image", "banner", "cover"]);
                    let color = self.color(&BRAND, 255.0);
                    self.leaf(NodeClass::Bitmap, name, Frame::new(16.0, y, CANVAS_WIDTH - 32.0, h - 40.0), color, Label::NonMerge)
                }
                (Filler::Image, 1) => self.text(16.0, y + h - 32.0, 220.0, 20.0),
                (Filler::Image, 2) => self.glyph(CANVAS_WIDTH - 40.0, y + h - 32.0, 20.0),
                (Filler::Button, 0) => {
                    let name = self.pick(&["button", "rectangle", "btn"]);
                    self.rect(name, Frame::new(16.0, y + 8.0, CANVAS_WIDTH - 32.0, 48.0), &BRAND)
                }
                (Filler::Button, 1) => self.text(140.0, mid - 10.0, 95.0, 20.0),
                (Filler::Button, 2) => self.glyph(110.0, mid - 10.0, 20.0),
                (Filler::Tabs, i) => {
                    let slot = (CANVAS_WIDTH - 32.0) / 4.0;
                    self.glyph(16.0 + slot * i as f64 + slot / 2.0 - 12.0, mid - 12.0, 24.0)
                }
                (Filler::Symbol, 0) => {
                    let name = self.pick(&["home indicator", "symbol/tab bar", "status"]);
                    let color = self.color(&INK, 255.0);
                    self.leaf(NodeClass::Symbol, name, Frame::new(120.0, mid - 3.0, 135.0, 5.0), color, Label::NonMerge)
                }
                (Filler::Symbol, 1) => self.text(16.0, y, 120.0, 14.0),
                (Filler::Symbol, 2) => self.text(CANVAS_WIDTH - 136.0, y, 120.0, 14.0),
                _ => self.rect("divider", Frame::new(16.0, y + h - 1.0, CANVAS_WIDTH - 32.0, 1.0), &SURFACES),
            })
            .collect();
        (self.row_container(name, Frame::new(0.0, y, CANVAS_WIDTH, h), children), h)
    }
}

/// Tiny and overlapping flags for every element of a prototype.
pub fn tag_strata(proto: &DesignPrototype) -> StrataFlags {
    let seq = extract_sequence(proto);
    let mut flags = StrataFlags::default();
    for (i, a) in seq.records.iter().enumerate() {
        if is_tiny(&a.frame) {
            flags.tiny.insert(a.uuid.clone());
        }
        if seq.records.iter().enumerate().any(|(j, b)| i != j && a.frame.intersection_area(&b.frame) > 0.0) {
            flags.overlapping.insert(a.uuid.clone());
        }
    }
    flags
}

pub fn is_tiny(frame: &Frame) -> bool {
    frame.w < TINY_SIDE && frame.h < TINY_SIDE
}
