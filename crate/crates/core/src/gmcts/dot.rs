use std::collections::BTreeSet;
use std::fmt::Write;

use crate::preference::serialize_tree;

use super::tree::SearchTree;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

/// Graphviz rendering. With `merged`, duplicate candidates are collapsed the
/// same way preference extraction collapses them.
pub fn to_dot(tree: &SearchTree, merged: bool, detect_penalty: f64) -> String {
    let mut out = String::from("digraph search {\n  node [shape=box, fontname=\"monospace\"];\n");
    let root = tree.root();
    let _ = writeln!(
        out,
        "  n0 [label=\"root [{}]\\n{}\\nN={} Q={:.4}\", style=bold];",
        root.lang,
        escape(&root.text),
        root.visits,
        root.cum_reward
    );
    if merged {
        let list = serialize_tree(tree, detect_penalty);
        let mut owner = vec![usize::MAX; tree.len()];
        for (pos, entry) in list.iter().enumerate() {
            for id in &entry.members {
                owner[*id] = pos;
            }
        }
        for (pos, e) in list.iter().enumerate().skip(1) {
            let _ = writeln!(
                out,
                "  n{pos} [label=\"{}\\nN={} Q={:.4} nu={:.4}{}\"];",
                escape(&e.text),
                e.visits,
                e.cum_reward,
                e.utility,
                if e.lang_ok { "" } else { " (lang?)" }
            );
        }
        let mut edges = BTreeSet::new();
        for n in tree.nodes.iter().skip(1) {
            let (Some(p), child) = (n.parent, owner[n.id]) else { continue };
            let parent = owner[p];
            if child != usize::MAX && parent != usize::MAX && child != parent {
                edges.insert((parent, child));
            }
        }
        for (a, b) in edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
    } else {
        for n in tree.nodes.iter().skip(1) {
            let nu = n.utility().map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "  n{} [label=\"#{} {:?}\\n{}\\nN={} Q={:.4} nu={}{}\"];",
                n.id,
                n.id,
                n.genesis,
                escape(&n.text),
                n.visits,
                n.cum_reward,
                nu,
                if n.lang_ok { "" } else { " (lang?)" }
            );
        }
        for n in tree.nodes.iter().skip(1) {
            if let Some(p) = n.parent {
                let _ = writeln!(out, "  n{p} -> n{};", n.id);
            }
        }
    }
    out.push_str("}\n");
    out
}
