use std::collections::HashSet;

use fragroup_core::grouping::{
    decode_groups, decode_spans, edit_distance, encode_labels, grouping_metrics, hungarian, match_groups, GroupSource,
    MergedGroup, DEFAULT_THRESHOLDS,
};
use fragroup_core::proto::{
    extract_sequence, parse_prototype, regroup_hierarchy, serialize_prototype, DesignPrototype, Frame, Label, NodeClass,
    Rgba, UiNode,
};
use proptest::prelude::*;

const CLASSES: [&str; 9] = ["oval", "rectangle", "path", "text", "bitmap", "symbol", "group", "artboard", "slice"];

fn coord() -> impl Strategy<Value = f64> {
    (-2_000_000i64..2_000_000).prop_map(|k| k as f64 / 1000.0)
}

fn size() -> impl Strategy<Value = f64> {
    (0i64..1_000_000).prop_map(|k| k as f64 / 1000.0)
}

fn frame() -> impl Strategy<Value = Frame> {
    (coord(), coord(), size(), size()).prop_map(|(x, y, w, h)| Frame::new(x, y, w, h))
}

fn color() -> impl Strategy<Value = Option<Rgba>> {
    proptest::option::of((0u8..=255, 0u8..=255, 0u8..=255, 0u8..=255))
        .prop_map(|c| c.map(|(r, g, b, a)| Rgba::new(r.into(), g.into(), b.into(), a.into())))
}

fn label() -> impl Strategy<Value = Option<Label>> {
    proptest::option::of(prop::sample::select(Label::ALL.to_vec()))
}

fn name() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _/\"\\\\é\u{1F600}-]{0,12}"
}

fn node() -> impl Strategy<Value = UiNode> {
    let leaf = (prop::sample::select(CLASSES.to_vec()), name(), frame(), color(), label()).prop_map(|(c, name, f, col, l)| {
        let mut n = UiNode::leaf("", NodeClass::parse(c), name, f);
        n.color = col;
        n.label = l;
        n
    });
    leaf.prop_recursive(3, 40, 5, |inner| {
        (name(), frame(), prop::collection::vec(inner, 0..5))
            .prop_map(|(name, f, children)| UiNode::container("", name, f, children))
    })
}

fn number(node: &mut UiNode, next: &mut usize) {
    node.uuid = format!("u{next}");
    *next += 1;
    for c in &mut node.children {
        number(c, next);
    }
}

fn prototype() -> impl Strategy<Value = DesignPrototype> {
    (prop::collection::vec(node(), 0..6), 1u32..3000, 1u32..3000).prop_map(|(children, w, h)| {
        let mut root = UiNode::container("", "root", Frame::new(0.0, 0.0, w.into(), h.into()), children);
        number(&mut root, &mut 0);
        DesignPrototype { id: "p".into(), canvas_width: w.into(), canvas_height: h.into(), root }
    })
}

fn strip_labels(node: &mut UiNode) {
    node.label = None;
    for c in &mut node.children {
        strip_labels(c);
    }
}

/// A random partition of `0..n` into groups and ungrouped positions, as
/// contiguous spans.
fn spans(n: usize) -> impl Strategy<Value = Vec<std::ops::Range<usize>>> {
    prop::collection::vec((0u8..3, 1usize..5), 0..=n).prop_map(move |steps| {
        let mut out = Vec::new();
        let mut i = 0;
        for (kind, len) in steps {
            let len = len.min(n - i);
            if len == 0 {
                break;
            }
            if kind == 0 {
                out.push(i..i + len);
            }
            i += len;
        }
        out
    })
}

fn unlabeled_with_spans() -> impl Strategy<Value = (DesignPrototype, Vec<std::ops::Range<usize>>)> {
    prototype().prop_flat_map(|mut p| {
        strip_labels(&mut p.root);
        let n = extract_sequence(&p).len();
        (Just(p), spans(n))
    })
}

fn groups_of(spans: &[std::ops::Range<usize>], uuids: &[String]) -> Vec<MergedGroup> {
    spans.iter().map(|r| MergedGroup::predicted(uuids[r.clone()].iter().cloned())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prototype_roundtrip(p in prototype()) {
        let bytes = serialize_prototype(&p);
        let back = parse_prototype(&bytes).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(serialize_prototype(&back), bytes);
    }

    #[test]
    fn regroup_keeps_leaves_and_encodes_groups((p, spans) in unlabeled_with_spans()) {
        let uuids = extract_sequence(&p).uuids();
        let groups = groups_of(&spans, &uuids);

        let out = regroup_hierarchy(&p, &groups).unwrap();
        let seq = extract_sequence(&out);
        prop_assert_eq!(seq.uuids(), uuids.clone());
        let expected = encode_labels(&groups, &uuids).unwrap();
        let labels = seq.labels();
        if groups.is_empty() {
            prop_assert!(labels.is_none() || labels == Some(expected));
        } else {
            prop_assert_eq!(labels, Some(expected));
        }
        let reparsed = parse_prototype(&serialize_prototype(&out)).unwrap();
        prop_assert_eq!(reparsed, out);
    }

    #[test]
    fn decode_inverts_encode(n in 0usize..=30, seed in prop::collection::vec(any::<(u8, u8)>(), 0..30)) {
        let uuids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        for (kind, len) in seed {
            let len = (len as usize % 4 + 1).min(n - i);
            if len == 0 { break; }
            if kind % 3 == 0 { spans.push(i..i + len); }
            i += len;
        }
        let groups: Vec<MergedGroup> = spans.iter()
            .map(|r| MergedGroup::ground_truth(uuids[r.clone()].iter().cloned()))
            .collect();
        let labels = encode_labels(&groups, &uuids).unwrap();
        prop_assert_eq!(decode_spans(&labels), spans);
        prop_assert_eq!(decode_groups(&labels, &uuids, GroupSource::GroundTruth).unwrap(), groups);
    }

    #[test]
    fn edit_distance_is_a_metric(a in prop::collection::vec(0u8..4, 0..12), b in prop::collection::vec(0u8..4, 0..12), c in prop::collection::vec(0u8..4, 0..12)) {
        let ab = edit_distance(&a, &b);
        prop_assert_eq!(ab, edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(ab <= edit_distance(&a, &c) + edit_distance(&c, &b));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(ab <= a.len().max(b.len()));
        prop_assert_eq!(ab == 0, a == b);
    }

    #[test]
    fn hungarian_is_a_valid_assignment(rows in 0usize..7, cols in 0usize..7, seed in prop::collection::vec(0i64..50, 36)) {
        let cost: Vec<Vec<i64>> = (0..rows).map(|i| (0..cols).map(|j| seed[i * 6 + j]).collect()).collect();
        let assignment = hungarian(&cost);
        prop_assert_eq!(assignment.len(), rows);
        let used: Vec<usize> = assignment.iter().flatten().copied().collect();
        prop_assert_eq!(used.len(), rows.min(cols));
        prop_assert_eq!(used.iter().collect::<HashSet<_>>().len(), used.len());
    }

    #[test]
    fn grouping_counts_are_consistent(
        gt_spans in spans(20),
        pred_spans in spans(20),
    ) {
        let uuids: Vec<String> = (0..20).map(|i| format!("e{i}")).collect();
        let gt: Vec<MergedGroup> = gt_spans.iter().map(|r| MergedGroup::ground_truth(uuids[r.clone()].iter().cloned())).collect();
        let pred = groups_of(&pred_spans, &uuids);
        let report = grouping_metrics(&gt, &pred, &DEFAULT_THRESHOLDS);
        let mut prev: Option<(u64, f64, f64)> = None;
        for t in DEFAULT_THRESHOLDS {
            let m = report.at(t).unwrap();
            prop_assert_eq!(m.tp + m.fn_, gt.len() as u64);
            prop_assert_eq!(m.tp + m.fp, pred.len() as u64);
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some((tp, p, r)) = prev {
                prop_assert!(m.tp >= tp && m.precision >= p && m.recall >= r);
            }
            prev = Some((m.tp, m.precision, m.recall));
        }
        let m = match_groups(&gt, &pred);
        prop_assert_eq!(m.pairs.len(), gt.len().min(pred.len()));
    }
}
