//! Aggregate accumulators and the two-stack sliding aggregator.

use crate::event::Value;

/// Running sum for one `avg(..)` slot. Integer inputs are summed exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Sum {
    Int(i128),
    Float(f64),
}

impl Sum {
    fn add(self, other: Sum) -> Sum {
        match (self, other) {
            (Sum::Int(a), Sum::Int(b)) => Sum::Int(a + b),
            (a, b) => Sum::Float(a.as_f64() + b.as_f64()),
        }
    }

    fn as_f64(self) -> f64 {
        match self {
            Sum::Int(i) => i as f64,
            Sum::Float(x) => x,
        }
    }
}

/// Combinable summary of a set of events: count, one sum per avg slot and
/// the earliest generation timestamp.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Agg {
    pub count: u64,
    pub sums: Vec<Sum>,
    pub min_gen: Option<i64>,
}

impl Agg {
    pub fn empty(slots: &[bool]) -> Self {
        Agg {
            count: 0,
            sums: slots
                .iter()
                .map(|&int| if int { Sum::Int(0) } else { Sum::Float(0.0) })
                .collect(),
            min_gen: None,
        }
    }

    /// Summary of a single event with the given avg-slot inputs.
    pub fn single(inputs: &[Value], gen_ts: Option<i64>) -> Self {
        Agg {
            count: 1,
            sums: inputs
                .iter()
                .map(|v| match v {
                    Value::Integer(i) => Sum::Int(*i as i128),
                    other => Sum::Float(other.as_f64().unwrap_or(f64::NAN)),
                })
                .collect(),
            min_gen: gen_ts,
        }
    }

    pub fn merge(&mut self, other: &Agg) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a = a.add(*b);
        }
        self.min_gen = match (self.min_gen, other.min_gen) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn combined(&self, other: &Agg) -> Agg {
        let mut out = self.clone();
        out.merge(other);
        out
    }

    pub fn avg(&self, slot: usize) -> f64 {
        self.sums[slot].as_f64() / self.count as f64
    }
}

/// FIFO of per-event summaries with O(1) amortized push, pop and total,
/// without ever subtracting from a running sum.
#[derive(Debug, Clone)]
pub(crate) struct TwoStack {
    /// Oldest element on top; each entry covers itself and everything newer
    /// than it within `front`.
    front: Vec<Agg>,
    back: Vec<Agg>,
    back_total: Agg,
    identity: Agg,
}

impl TwoStack {
    pub fn new(identity: Agg) -> Self {
        TwoStack {
            front: Vec::new(),
            back: Vec::new(),
            back_total: identity.clone(),
            identity,
        }
    }

    pub fn len(&self) -> usize {
        self.front.len() + self.back.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, item: Agg) {
        self.back_total.merge(&item);
        self.back.push(item);
    }

    pub fn pop(&mut self) {
        if self.front.is_empty() {
            let mut acc = self.identity.clone();
            while let Some(item) = self.back.pop() {
                acc = item.combined(&acc);
                self.front.push(acc.clone());
            }
            self.back_total = self.identity.clone();
        }
        self.front.pop();
    }

    pub fn total(&self) -> Agg {
        match self.front.last() {
            Some(f) => f.combined(&self.back_total),
            None => self.back_total.clone(),
        }
    }
}
