//! Observation/control history windows and their mixed-radix encoding.
//!
//! A window holding `n` controls (and `n + 1` observations) is encoded as
//! `obs_part * l^n + ctrl_part`, where
//! `obs_part = sum_i y_i L^i` and `ctrl_part = sum_j u_j l^j`, index 0 being
//! the oldest entry. Policy files rely on this layout.

use crate::error::{Error, Result};
use crate::model::check_index;

/// The last `min(m+1, t+1)` observations and the controls between them,
/// oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryWindow {
    obs: Vec<usize>,
    ctrl: Vec<usize>,
}

impl HistoryWindow {
    pub fn new(obs: Vec<usize>, ctrl: Vec<usize>) -> Result<Self> {
        if obs.is_empty() || obs.len() != ctrl.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "window needs one more observation than controls (got {} and {})",
                obs.len(),
                ctrl.len()
            )));
        }
        Ok(Self { obs, ctrl })
    }

    pub fn single(y0: usize) -> Self {
        Self {
            obs: vec![y0],
            ctrl: Vec::new(),
        }
    }

    pub fn obs(&self) -> &[usize] {
        &self.obs
    }

    pub fn ctrl(&self) -> &[usize] {
        &self.ctrl
    }

    /// Number of controls in the window.
    pub fn span(&self) -> usize {
        self.ctrl.len()
    }

    /// Append `(u, y)` and drop the oldest pair once more than `lag` controls are held.
    pub fn push(&mut self, u: usize, y: usize, lag: usize) {
        self.ctrl.push(u);
        self.obs.push(y);
        while self.ctrl.len() > lag {
            self.ctrl.remove(0);
            self.obs.remove(0);
        }
    }

    /// The trailing window of a full history.
    pub fn tail_of(obs: &[usize], ctrl: &[usize], lag: usize) -> Result<Self> {
        if obs.len() != ctrl.len() + 1 {
            return Err(Error::InvalidArgument("history needs one more observation than controls".into()));
        }
        let n = ctrl.len().min(lag);
        Ok(Self {
            obs: obs[obs.len() - n - 1..].to_vec(),
            ctrl: ctrl[ctrl.len() - n..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowCodec {
    n_obs: usize,
    n_ctrl: usize,
    lag: usize,
}

impl WindowCodec {
    pub fn new(n_obs: usize, n_ctrl: usize, lag: usize) -> Result<Self> {
        if n_obs == 0 || n_ctrl == 0 {
            return Err(Error::InvalidArgument("window alphabet sizes must be positive".into()));
        }
        let codec = Self { n_obs, n_ctrl, lag };
        // every level must be addressable
        codec.checked_size(lag).ok_or_else(|| {
            Error::InvalidArgument(format!("windows of lag {lag} overflow the index space"))
        })?;
        Ok(codec)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Number of controls held by the window at time `t`.
    pub fn span_at(&self, t: usize) -> usize {
        t.min(self.lag)
    }

    fn checked_size(&self, n: usize) -> Option<usize> {
        let obs = self.n_obs.checked_pow(u32::try_from(n + 1).ok()?)?;
        let ctrl = self.n_ctrl.checked_pow(u32::try_from(n).ok()?)?;
        obs.checked_mul(ctrl)
    }

    /// `L^{n+1} l^n`, the number of windows holding `n` controls.
    pub fn size(&self, n: usize) -> usize {
        self.checked_size(n).expect("level size checked at construction")
    }

    pub fn encode(&self, window: &HistoryWindow) -> Result<usize> {
        let n = window.span();
        if n > self.lag {
            return Err(Error::InvalidArgument(format!(
                "window holds {n} controls but lag is {}",
                self.lag
            )));
        }
        Ok(self.encode_parts(window.obs(), window.ctrl())?)
    }

    fn encode_parts(&self, obs: &[usize], ctrl: &[usize]) -> Result<usize> {
        let mut obs_part = 0usize;
        for &y in obs.iter().rev() {
            check_index("observation", y, self.n_obs)?;
            obs_part = obs_part * self.n_obs + y;
        }
        let mut ctrl_part = 0usize;
        for &u in ctrl.iter().rev() {
            check_index("control", u, self.n_ctrl)?;
            ctrl_part = ctrl_part * self.n_ctrl + u;
        }
        Ok(obs_part * self.n_ctrl.pow(ctrl.len() as u32) + ctrl_part)
    }

    pub fn decode(&self, n: usize, index: usize) -> Result<HistoryWindow> {
        if n > self.lag {
            return Err(Error::InvalidArgument(format!("span {n} exceeds lag {}", self.lag)));
        }
        check_index("window", index, self.size(n))?;
        let ctrl_radix = self.n_ctrl.pow(n as u32);
        let mut obs_part = index / ctrl_radix;
        let mut ctrl_part = index % ctrl_radix;
        let mut obs = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            obs.push(obs_part % self.n_obs);
            obs_part /= self.n_obs;
        }
        let mut ctrl = Vec::with_capacity(n);
        for _ in 0..n {
            ctrl.push(ctrl_part % self.n_ctrl);
            ctrl_part /= self.n_ctrl;
        }
        Ok(HistoryWindow { obs, ctrl })
    }

    /// Index of the window after appending control `u` and observation `y`
    /// to window `index` of span `n`. Returns the new span and index.
    #[inline]
    pub fn shift(&self, n: usize, index: usize, u: usize, y: usize) -> (usize, usize) {
        let l = self.n_ctrl;
        let big_l = self.n_obs;
        let ctrl_radix = l.pow(n as u32);
        let obs_part = index / ctrl_radix;
        let ctrl_part = index % ctrl_radix;
        if n < self.lag {
            let obs2 = obs_part + y * big_l.pow(n as u32 + 1);
            let ctrl2 = ctrl_part + u * ctrl_radix;
            (n + 1, obs2 * ctrl_radix * l + ctrl2)
        } else if n == 0 {
            (0, y)
        } else {
            let obs2 = obs_part / big_l + y * big_l.pow(n as u32);
            let ctrl2 = ctrl_part / l + u * l.pow(n as u32 - 1);
            (n, obs2 * ctrl_radix + ctrl2)
        }
    }

    /// Index of the child window of span `n + 1` extending window `index`
    /// of span `n` (no dropping), used when building windows bottom-up.
    #[inline]
    pub(crate) fn extend(&self, n: usize, index: usize, u: usize, y: usize) -> usize {
        let ctrl_radix = self.n_ctrl.pow(n as u32);
        let obs_part = index / ctrl_radix;
        let ctrl_part = index % ctrl_radix;
        let obs2 = obs_part + y * self.n_obs.pow(n as u32 + 1);
        let ctrl2 = ctrl_part + u * ctrl_radix;
        obs2 * ctrl_radix * self.n_ctrl + ctrl2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oldest_first_layout() {
        let c = WindowCodec::new(2, 2, 1).unwrap();
        // obs (y_{t-1}=1, y_t=0), ctrl u_{t-1}=1: obs_part = 1, idx = 1*2 + 1
        let w = HistoryWindow::new(vec![1, 0], vec![1]).unwrap();
        assert_eq!(c.encode(&w).unwrap(), 3);
        assert_eq!(c.size(1), 8);
        assert_eq!(c.size(0), 2);
    }

    #[test]
    fn shift_drops_oldest_when_full() {
        let c = WindowCodec::new(3, 2, 2).unwrap();
        let w = HistoryWindow::new(vec![2, 0, 1], vec![1, 0]).unwrap();
        let idx = c.encode(&w).unwrap();
        let (n, next) = c.shift(2, idx, 1, 2);
        let mut expect = w.clone();
        expect.push(1, 2, 2);
        assert_eq!(n, 2);
        assert_eq!(c.decode(2, next).unwrap(), expect);
    }

    #[test]
    fn lag_zero_shift() {
        let c = WindowCodec::new(4, 3, 0).unwrap();
        assert_eq!(c.shift(0, 2, 1, 3), (0, 3));
    }

    #[test]
    fn malformed_windows_error() {
        let c = WindowCodec::new(2, 2, 1).unwrap();
        assert!(c.encode(&HistoryWindow::new(vec![0, 2], vec![0]).unwrap()).is_err());
        assert!(c.encode(&HistoryWindow::new(vec![0, 1, 1], vec![0, 0]).unwrap()).is_err());
        assert!(c.decode(1, 8).is_err());
        assert!(HistoryWindow::new(vec![0], vec![0]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(big_l in 1usize..5, l in 1usize..4, lag in 0usize..4, seed in any::<u64>()) {
            let c = WindowCodec::new(big_l, l, lag).unwrap();
            for n in 0..=lag {
                let size = c.size(n);
                let i = (seed as usize) % size;
                let w = c.decode(n, i).unwrap();
                prop_assert_eq!(c.encode(&w).unwrap(), i);
            }
        }

        #[test]
        fn shift_matches_push(big_l in 1usize..4, l in 1usize..4, lag in 0usize..3, n_raw in 0usize..3, seed in any::<u64>(), u_raw in 0usize..4, y_raw in 0usize..4) {
            let c = WindowCodec::new(big_l, l, lag).unwrap();
            let n = n_raw.min(lag);
            let idx = (seed as usize) % c.size(n);
            let (u, y) = (u_raw % l, y_raw % big_l);
            let mut w = c.decode(n, idx).unwrap();
            w.push(u, y, lag);
            let (n2, idx2) = c.shift(n, idx, u, y);
            prop_assert_eq!(n2, w.span());
            prop_assert_eq!(idx2, c.encode(&w).unwrap());
            if n < lag {
                prop_assert_eq!(c.extend(n, idx, u, y), idx2);
            }
        }
    }
}
