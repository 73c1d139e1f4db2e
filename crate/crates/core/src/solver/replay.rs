use rand::Rng;

/// Fixed-capacity ring buffer of `(s, a, r, s', done)` rows.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    rows: Vec<f64>,
    len: usize,
    next: usize,
}

/// Column-major view of a sampled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    pub size: usize,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            state_dim,
            action_dim,
            capacity,
            rows: Vec::new(),
            len: 0,
            next: 0,
        }
    }

    fn width(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, s: &[f64], a: &[f64], r: f64, s_next: &[f64], done: bool) {
        let w = self.width();
        let mut row = Vec::with_capacity(w);
        row.extend_from_slice(s);
        row.extend_from_slice(a);
        row.push(r);
        row.extend_from_slice(s_next);
        row.push(if done { 1.0 } else { 0.0 });
        debug_assert_eq!(row.len(), w);
        if self.len < self.capacity {
            self.rows.extend(row);
            self.len += 1;
        } else {
            self.rows[self.next * w..(self.next + 1) * w].copy_from_slice(&row);
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Row `i` as `(s, a, r, s', done)`.
    pub fn get(&self, i: usize) -> (&[f64], &[f64], f64, &[f64], bool) {
        let (sd, ad, w) = (self.state_dim, self.action_dim, self.width());
        let row = &self.rows[i * w..(i + 1) * w];
        (
            &row[..sd],
            &row[sd..sd + ad],
            row[sd + ad],
            &row[sd + ad + 1..w - 1],
            row[w - 1] != 0.0,
        )
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Batch {
        assert!(self.len > 0, "sampling from an empty buffer");
        let mut out = Batch {
            states: Vec::with_capacity(batch * self.state_dim),
            actions: Vec::with_capacity(batch * self.action_dim),
            rewards: Vec::with_capacity(batch),
            next_states: Vec::with_capacity(batch * self.state_dim),
            dones: Vec::with_capacity(batch),
            size: batch,
        };
        for _ in 0..batch {
            let (s, a, r, s2, d) = self.get(rng.random_range(0..self.len));
            out.states.extend_from_slice(s);
            out.actions.extend_from_slice(a);
            out.rewards.push(r);
            out.next_states.extend_from_slice(s2);
            out.dones.push(d);
        }
        out
    }
}
