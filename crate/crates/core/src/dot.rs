//! Graphviz DOT emission for traces: solid edges for data dependencies,
//! dashed for control, optional fill color by node type, and truncation for
//! large graphs.

use std::fmt::Write;

use crate::schema::{ExecutionTrace, NodeType};

#[derive(Debug, Clone)]
pub struct DotOptions {
    pub max_nodes: usize,
    pub color_by_node_type: bool,
}

impl Default for DotOptions {
    fn default() -> Self {
        DotOptions { max_nodes: 2000, color_by_node_type: false }
    }
}

fn fill(ty: NodeType) -> &'static str {
    match ty {
        NodeType::Comp => "lightblue",
        NodeType::MemLoad | NodeType::MemStore => "lightgrey",
        NodeType::CommColl => "salmon",
        NodeType::CommSend | NodeType::CommRecv => "khaki",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn emit_dot(trace: &ExecutionTrace, opts: &DotOptions) -> String {
    let mut out = String::from("digraph {\n");
    let shown = trace.nodes.len().min(opts.max_nodes);
    for n in trace.nodes.iter().take(shown) {
        let _ = write!(out, "  n{} [label=\"{}\"", n.id, escape(&n.name));
        if opts.color_by_node_type {
            let _ = write!(out, ", style=filled, fillcolor={}", fill(n.node_type));
        }
        out.push_str("];\n");
    }
    if trace.nodes.len() > shown {
        let _ = writeln!(
            out,
            "  truncated [label=\"…+{} nodes\", shape=box];",
            trace.nodes.len() - shown
        );
    }
    // edges only between shown nodes
    let visible: std::collections::HashSet<u64> =
        trace.nodes.iter().take(shown).map(|n| n.id).collect();
    for n in trace.nodes.iter().take(shown) {
        for d in &n.data_deps {
            if visible.contains(d) {
                let _ = writeln!(out, "  n{} -> n{};", d, n.id);
            }
        }
        for d in &n.ctrl_deps {
            if visible.contains(d) {
                let _ = writeln!(out, "  n{} -> n{} [style=dashed];", d, n.id);
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_micro, generate_random_dag, MicroKind};

    #[test]
    fn chain_has_one_solid_edge() {
        let t = &generate_micro(MicroKind::Chain { n: 2 }).unwrap()[0];
        let dot = emit_dot(t, &DotOptions::default());
        assert!(dot.contains("n1 [label=\"comp_1\"]"));
        assert!(dot.contains("n1 -> n2;"));
        assert!(!dot.contains("style=dashed"));
    }

    #[test]
    fn empty_trace_is_empty_digraph() {
        let t = ExecutionTrace::new(0, 1);
        assert_eq!(emit_dot(&t, &DotOptions::default()), "digraph {\n}\n");
    }

    #[test]
    fn truncation_adds_summary_node() {
        let t = generate_random_dag(3000, 0.0, 1).unwrap();
        let dot = emit_dot(&t, &DotOptions::default());
        assert!(dot.contains("…+1000 nodes"));
        assert_eq!(dot.matches("label=\"comp_").count(), 2000);
    }

    #[test]
    fn control_edges_are_dashed() {
        let mut t = ExecutionTrace::new(0, 1);
        let a = crate::schema::TraceNode::new(1, "a", NodeType::Comp);
        let mut b = crate::schema::TraceNode::new(2, "b", NodeType::CommColl);
        b.ctrl_deps = vec![1];
        t.nodes.push(a);
        t.nodes.push(b);
        let dot = emit_dot(&t, &DotOptions { color_by_node_type: true, ..Default::default() });
        assert!(dot.contains("n1 -> n2 [style=dashed];"));
        assert!(dot.contains("fillcolor=salmon"));
    }
}
