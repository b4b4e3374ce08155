use super::Layer;
use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

/// `[B, T, D] -> [B*D, T, 1]`: each input channel becomes its own sequence.
pub struct ChannelSplit {
    input_shape: Option<Vec<usize>>,
}

impl ChannelSplit {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl Default for ChannelSplit {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for ChannelSplit {
    fn describe(&self) -> String {
        "channel_split".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, t, d] = *x.shape() else {
            return Err(shape_err(
                "channel_split",
                format!("expected [B, T, D], got {:?}", x.shape()),
            ));
        };
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ti in 0..t {
                for di in 0..d {
                    out[(bi * d + di) * t + ti] = src[(bi * t + ti) * d + di];
                }
            }
        }
        self.input_shape = Some(x.shape().to_vec());
        Ok(Tensor::from_parts(vec![b * d, t, 1], out))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or(TensorError::BackwardBeforeForward("channel_split"))?;
        let [b, t, d] = shape[..] else { unreachable!() };
        if dy.len() != b * t * d {
            return Err(shape_err(
                "channel_split backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let src = dy.data();
        let mut dx = vec![0.0; src.len()];
        for bi in 0..b {
            for ti in 0..t {
                for di in 0..d {
                    dx[(bi * t + ti) * d + di] = src[(bi * d + di) * t + ti];
                }
            }
        }
        Ok(Tensor::from_parts(shape, dx))
    }
}

/// `[B*D, T, F] -> [B, T, D, F]`, the inverse grouping of [`ChannelSplit`]
/// once each channel has been encoded into `F` features.
pub struct ChannelMerge {
    channels: usize,
    input_shape: Option<Vec<usize>>,
}

impl ChannelMerge {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            input_shape: None,
        }
    }
}

impl Layer for ChannelMerge {
    fn describe(&self) -> String {
        format!("channel_merge channels={}", self.channels)
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let d = self.channels;
        let [bd, t, f] = *x.shape() else {
            return Err(shape_err(
                "channel_merge",
                format!("expected [B*D, T, F], got {:?}", x.shape()),
            ));
        };
        if bd % d != 0 {
            return Err(shape_err(
                "channel_merge",
                format!("leading dim {bd} not divisible by {d} channels"),
            ));
        }
        let b = bd / d;
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for di in 0..d {
                for ti in 0..t {
                    let from = ((bi * d + di) * t + ti) * f;
                    let to = ((bi * t + ti) * d + di) * f;
                    out[to..to + f].copy_from_slice(&src[from..from + f]);
                }
            }
        }
        self.input_shape = Some(x.shape().to_vec());
        Ok(Tensor::from_parts(vec![b, t, d, f], out))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or(TensorError::BackwardBeforeForward("channel_merge"))?;
        let d = self.channels;
        let [bd, t, f] = shape[..] else {
            unreachable!()
        };
        if dy.len() != bd * t * f {
            return Err(shape_err(
                "channel_merge backward",
                format!("dy {:?}", dy.shape()),
            ));
        }
        let b = bd / d;
        let src = dy.data();
        let mut dx = vec![0.0; src.len()];
        for bi in 0..b {
            for di in 0..d {
                for ti in 0..t {
                    let to = ((bi * d + di) * t + ti) * f;
                    let from = ((bi * t + ti) * d + di) * f;
                    dx[to..to + f].copy_from_slice(&src[from..from + f]);
                }
            }
        }
        Ok(Tensor::from_parts(shape, dx))
    }
}

/// `[.., A, B] -> [.., A*B]` (a pure view change).
#[derive(Default)]
pub struct MergeLastTwo {
    input_shape: Option<Vec<usize>>,
}

impl MergeLastTwo {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for MergeLastTwo {
    fn describe(&self) -> String {
        "merge_last_two".into()
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() < 3 {
            return Err(shape_err(
                "merge_last_two",
                format!("need rank >= 3, got {s:?}"),
            ));
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.push(s[s.len() - 2] * s[s.len() - 1]);
        self.input_shape = Some(s.to_vec());
        x.clone().reshape(&shape)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or(TensorError::BackwardBeforeForward("merge_last_two"))?;
        dy.clone().reshape(&shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_then_merge_regroups_channels() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let mut split = ChannelSplit::new();
        let s = split.forward(&x).unwrap();
        assert_eq!(s.shape(), &[8, 3, 1]);
        // sequence for (b=1, d=2) holds x[1, :, 2]
        let seq: Vec<f64> = (0..3).map(|t| s.data()[(4 + 2) * 3 + t]).collect();
        let expect: Vec<f64> = (0..3).map(|t| x.data()[(3 + t) * 4 + 2]).collect();
        assert_eq!(seq, expect);
        let mut merge = ChannelMerge::new(4);
        let m = merge.forward(&s).unwrap();
        assert_eq!(m.shape(), &[2, 3, 4, 1]);
        assert_eq!(m.data(), x.data());
        let back = split.backward(&merge.backward(&m).unwrap()).unwrap();
        assert_eq!(back, x);
    }
}
