//! Index bookkeeping for the augmented state `z_k = [x_k; û_{k-1}; …; û_0]`.

/// Block layout of `z_k` at step `k`; `û_j` stacks `u_{1,j} … u_{p,j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedLayout {
    pub state_dim: usize,
    pub input_dim: usize,
    pub controllers: usize,
    pub step: usize,
}

impl AugmentedLayout {
    pub fn new(state_dim: usize, input_dim: usize, controllers: usize, step: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            controllers,
            step,
        }
    }

    /// `M + p·k·K`.
    pub fn dim(&self) -> usize {
        self.state_dim + self.controllers * self.step * self.input_dim
    }

    pub fn next(&self) -> Self {
        Self {
            step: self.step + 1,
            ..*self
        }
    }

    /// Width of one stacked control vector `û_j`.
    pub fn stack_width(&self) -> usize {
        self.controllers * self.input_dim
    }

    /// Row offset of `u_{m, k-lag}` inside `z_k` (`m` zero-based, `lag >= 1`).
    pub fn history_offset(&self, controller: usize, lag: usize) -> usize {
        debug_assert!(lag >= 1 && lag <= self.step && controller < self.controllers);
        self.state_dim + (lag - 1) * self.stack_width() + controller * self.input_dim
    }

    /// Dimension of `[z_k; u_{1,k}; …; u_{p,k}]`.
    pub fn extended_dim(&self) -> usize {
        self.dim() + self.stack_width()
    }

    /// Offset of the current control `u_{m,k}` in the extended vector.
    pub fn current_offset(&self, controller: usize) -> usize {
        self.dim() + controller * self.input_dim
    }

    /// Extended-vector index feeding row `state_dim + t` of `z_{k+1}`.
    pub fn shifted_source(&self, t: usize) -> usize {
        let w = self.stack_width();
        if t < w {
            self.dim() + t
        } else {
            self.state_dim + (t - w)
        }
    }

    /// Information-block id of each column of `z_k`: 0 for the state, then
    /// `1 + (lag-1)·p + m` for each history block.
    pub fn column_block(&self, col: usize) -> usize {
        if col < self.state_dim {
            0
        } else {
            1 + (col - self.state_dim) / self.input_dim
        }
    }

    /// `(controller, lag)` owning a history column.
    pub fn history_owner(&self, col: usize) -> Option<(usize, usize)> {
        if col < self.state_dim || col >= self.dim() {
            return None;
        }
        let block = (col - self.state_dim) / self.input_dim;
        Some((block % self.controllers, block / self.controllers + 1))
    }
}
