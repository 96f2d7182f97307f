use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::numcore::{finite_diff_check_many, Graph, Tensor, Var};

/// A graph plus the binding of named parameters to graph leaves.
///
/// Every parameter is recorded at most once per session, so a tensor used by
/// several operations accumulates all of its adjoints in one leaf.
pub struct Session<'a> {
    pub graph: Graph,
    bound: BTreeMap<String, Var>,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
}

impl<'a> Session<'a> {
    /// A session in which no parameter receives a gradient.
    pub fn inference() -> Self {
        Self::with_selection(|_| false)
    }

    /// A session in which every parameter receives a gradient.
    pub fn training_all() -> Self {
        Self::with_selection(|_| true)
    }

    pub fn with_selection(select: impl Fn(&str) -> bool + 'a) -> Self {
        Session {
            graph: Graph::new(),
            bound: BTreeMap::new(),
            trainable: Box::new(select),
        }
    }

    /// Wraps an existing graph; nothing is trainable unless pre-bound.
    pub fn from_graph(graph: Graph) -> Self {
        Session {
            graph,
            bound: BTreeMap::new(),
            trainable: Box::new(|_| false),
        }
    }

    /// Binds `name` to an existing graph value; later lookups of `name`
    /// return it instead of recording the stored tensor.
    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(String::from(name), v);
    }

    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let grad = (self.trainable)(name);
        let v = self.graph.leaf(t.clone().with_requires_grad(grad));
        self.bound.insert(String::from(name), v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// Gradients of every bound trainable parameter after backward.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g.to_vec())))
            .collect()
    }

    /// Moves the gradients out instead of copying them.
    pub fn take_grads(&mut self) -> BTreeMap<String, Vec<f64>> {
        let graph = &mut self.graph;
        self.bound
            .iter()
            .filter_map(|(n, &v)| graph.take_grad(v).map(|g| (n.clone(), g)))
            .collect()
    }
}

/// Finite-difference check of a session-level scalar function of `points`.
pub fn finite_diff_check_session<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Session, &[Var]) -> Result<Var>,
{
    finite_diff_check_many(
        |g: &mut Graph, vars: &[Var]| {
            let mut s = Session::from_graph(core::mem::take(g));
            let out = f(&mut s, vars);
            *g = s.graph;
            out
        },
        points,
        eps,
    )
}
