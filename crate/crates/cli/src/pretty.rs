//! Plain-text tables for `--pretty`.

use std::fmt::Write;

use serde_json::Value;

pub fn render(v: &Value) -> String {
    let mut out = String::new();
    if let Some(rows) = v.get("rows").and_then(Value::as_array) {
        ablation_table(&mut out, rows);
    }
    if let Some(c) = v.get("classification") {
        classification_table(&mut out, c);
    }
    if let Some(g) = v.get("grouping") {
        grouping_table(&mut out, g);
    }
    if let Some(epochs) = v.get("epochs").and_then(Value::as_array) {
        epoch_table(&mut out, epochs);
    }
    if let Some(groups) = v.get("groups").and_then(Value::as_array) {
        let _ = writeln!(out, "{} predicted groups", groups.len());
        for (i, g) in groups.iter().enumerate() {
            let members: Vec<&str> = g.as_array().into_iter().flatten().filter_map(Value::as_str).collect();
            let _ = writeln!(out, "  {:>3}  {}", i + 1, members.join(" "));
        }
    }
    let Some(obj) = v.as_object() else {
        return v.to_string();
    };
    for (k, val) in obj {
        if matches!(k.as_str(), "config" | "rows" | "classification" | "grouping" | "epochs" | "groups" | "labels") {
            continue;
        }
        let _ = writeln!(out, "{k}: {}", scalar(val));
    }
    out.trim_end().to_string()
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if !n.is_u64() && !n.is_i64() => format!("{f:.4}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn num(v: Option<&Value>) -> String {
    v.and_then(Value::as_f64).map_or_else(|| "-".into(), |f| format!("{f:.3}"))
}

fn ablation_table(out: &mut String, rows: &[Value]) {
    let _ = writeln!(out, "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}", "variant", "mP", "mR", "mF1", "wP", "wR", "wF1", "F1@4");
    for r in rows {
        let m = &r["macro"];
        let w = &r["weighted"];
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}",
            r["variant"].as_str().unwrap_or("?"),
            num(m.get("precision")),
            num(m.get("recall")),
            num(m.get("f1")),
            num(w.get("precision")),
            num(w.get("recall")),
            num(w.get("f1")),
            num(r.get("grouping_f1")),
        );
    }
    out.push('\n');
}

fn classification_table(out: &mut String, c: &Value) {
    let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "support");
    if let Some(per) = c["per_class"].as_object() {
        for (name, m) in per {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>9} {:>9} {:>9}",
                name,
                num(m.get("precision")),
                num(m.get("recall")),
                num(m.get("f1")),
                scalar(&m["support"])
            );
        }
    }
    for (name, key) in [("macro", "macro_avg"), ("weighted", "weighted_avg")] {
        let m = &c[key];
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", name, num(m.get("precision")), num(m.get("recall")), num(m.get("f1")));
    }
    let _ = writeln!(out, "accuracy {}\n", num(c.get("accuracy")));
}

fn grouping_table(out: &mut String, g: &Value) {
    let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}", "threshold", "precision", "recall", "f1", "tp", "fp", "fn");
    if let Some(ts) = g["thresholds"].as_object() {
        let mut ts: Vec<_> = ts.iter().collect();
        ts.sort_by_key(|(k, _)| k.parse::<usize>().unwrap_or(usize::MAX));
        for (t, m) in ts {
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
                t,
                num(m.get("precision")),
                num(m.get("recall")),
                num(m.get("f1")),
                scalar(&m["tp"]),
                scalar(&m["fp"]),
                scalar(&m["fn"])
            );
        }
    }
    if let Some(strata) = g.get("strata").and_then(Value::as_object) {
        for (name, s) in strata {
            let _ = writeln!(out, "{name} (threshold {}): f1 {}", s["threshold"], num(s.get("f1")));
        }
    }
    out.push('\n');
}

fn epoch_table(out: &mut String, epochs: &[Value]) {
    let _ = writeln!(out, "{:>5} {:>10} {:>10} {:>8}", "epoch", "lr", "loss", "val F1");
    for e in epochs {
        let mark = if e["best"].as_bool() == Some(true) { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:>5} {:>10.2e} {:>10.4} {:>8}{mark}",
            scalar(&e["epoch"]),
            e["lr"].as_f64().unwrap_or(f64::NAN),
            e["train_loss"].as_f64().unwrap_or(f64::NAN),
            num(e.get("val_macro_f1")),
        );
    }
    out.push('\n');
}
