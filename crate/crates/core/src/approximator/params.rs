use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BoomError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Mish,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Mish => {
                if x > 20.0 {
                    return x;
                }
                // tanh(softplus(x)) = n / (n + 2) with n = e^x (e^x + 2)
                let e = x.exp();
                let n = e * (e + 2.0);
                x * n / (n + 2.0)
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Mish => {
                if x > 20.0 {
                    return 1.0;
                }
                let e = x.exp();
                let n = e * (e + 2.0);
                let d = n + 2.0;
                let t = n / d;
                let sech2 = 4.0 * (n + 1.0) / (d * d);
                t + x * sech2 * e / (1.0 + e)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u64 {
        match self {
            Activation::Mish => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Mish),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            other => Err(BoomError::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

/// Shape of a dense network: `input -> hidden... -> output`.
///
/// Hidden layers are `linear -> [layer norm] -> activation -> [dropout]`; the
/// output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub layer_norm: bool,
    pub dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Mish,
            layer_norm: false,
            dropout_rate: 0.0,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_layer_norm(mut self, layer_norm: bool) -> Self {
        self.layer_norm = layer_norm;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(BoomError::InvalidSpec("all layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(BoomError::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer, output layer last.
    pub fn linear_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn layout(&self) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |kind, rows, cols, blocks: &mut Vec<Block>| {
            blocks.push(Block {
                kind,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        };
        let shapes = self.linear_shapes();
        let last = shapes.len() - 1;
        for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            push(BlockKind::Weight, fan_out, fan_in, &mut blocks);
            push(BlockKind::Bias, fan_out, 1, &mut blocks);
            if i != last && self.layer_norm {
                push(BlockKind::NormGain, fan_out, 1, &mut blocks);
                push(BlockKind::NormShift, fan_out, 1, &mut blocks);
            }
        }
        blocks
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Block::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
    NormGain,
    NormShift,
}

impl BlockKind {
    fn code(self) -> u64 {
        match self {
            BlockKind::Weight => 0,
            BlockKind::Bias => 1,
            BlockKind::NormGain => 2,
            BlockKind::NormShift => 3,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(BlockKind::Weight),
            1 => Ok(BlockKind::Bias),
            2 => Ok(BlockKind::NormGain),
            3 => Ok(BlockKind::NormShift),
            other => Err(BoomError::Checkpoint(format!("unknown block kind {other}"))),
        }
    }
}

/// One contiguous tensor inside a flat parameter vector. Weights are stored
/// row-major as `(fan_out, fan_in)`; vectors use `cols == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector of one network plus the layout that slices it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub layout: Vec<Block>,
}

impl ParamSet {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layout = spec.layout();
        let n = layout.iter().map(Block::len).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, index: usize) -> &[f64] {
        &self.values[self.layout[index].range()]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout[index].range();
        &mut self.values[range]
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(BoomError::LayoutMismatch(format!(
                "{} blocks/{} values vs {} blocks/{} values",
                self.layout.len(),
                self.values.len(),
                other.layout.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn check_spec(&self, spec: &MlpSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(BoomError::LayoutMismatch(
                "parameter layout does not match network spec".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Layout header (block count, then `kind, rows, cols` per block, then
    /// value count) followed by the values, all little-endian 64-bit.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.layout.len() as u64).to_le_bytes())?;
        for b in &self.layout {
            w.write_all(&b.kind.code().to_le_bytes())?;
            w.write_all(&(b.rows as u64).to_le_bytes())?;
            w.write_all(&(b.cols as u64).to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let num_blocks = read_u64(r)? as usize;
        let mut layout = Vec::with_capacity(num_blocks);
        let mut offset = 0;
        for _ in 0..num_blocks {
            let kind = BlockKind::from_code(read_u64(r)?)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            layout.push(Block {
                kind,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        }
        let n = read_u64(r)? as usize;
        if n != offset {
            return Err(BoomError::Checkpoint(format!(
                "value count {n} does not match layout size {offset}"
            )));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(read_bytes(r)?));
        }
        Ok(Self { values, layout })
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| BoomError::Checkpoint(format!("truncated stream: {e}")))?;
    Ok(buf)
}

pub(crate) fn write_spec<W: Write>(spec: &MlpSpec, w: &mut W) -> std::io::Result<()> {
    let mut put = |v: u64| w.write_all(&v.to_le_bytes());
    put(spec.input_dim as u64)?;
    put(spec.hidden_dims.len() as u64)?;
    for &h in &spec.hidden_dims {
        put(h as u64)?;
    }
    put(spec.output_dim as u64)?;
    put(spec.activation.code())?;
    put(spec.layer_norm as u64)?;
    w.write_all(&spec.dropout_rate.to_le_bytes())
}

pub(crate) fn read_spec<R: Read>(r: &mut R) -> Result<MlpSpec> {
    let input_dim = read_u64(r)? as usize;
    let n_hidden = read_u64(r)? as usize;
    let hidden_dims = (0..n_hidden)
        .map(|_| read_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let output_dim = read_u64(r)? as usize;
    let activation = Activation::from_code(read_u64(r)?)?;
    let layer_norm = read_u64(r)? != 0;
    let dropout_rate = f64::from_le_bytes(read_bytes(r)?);
    Ok(MlpSpec {
        input_dim,
        hidden_dims,
        output_dim,
        activation,
        layer_norm,
        dropout_rate,
    })
}

/// Fan-in variance scaling (`N(0, 1/fan_in)`) for weights, zero biases, unit
/// norm gains.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut params = ParamSet::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..params.layout.len() {
        let block = params.layout[i];
        match block.kind {
            BlockKind::Weight => {
                let std = (1.0 / block.cols as f64).sqrt();
                for v in params.block_mut(i) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * std;
                }
            }
            BlockKind::NormGain => params.block_mut(i).fill(1.0),
            BlockKind::Bias | BlockKind::NormShift => {}
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mish_matches_softplus_form() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            let sp = if x > 30.0 { x } else { x.exp().ln_1p() };
            let t = sp.tanh();
            let reference = x * t;
            let sigmoid = 1.0 / (1.0 + (-x).exp());
            let d_reference = t + x * (1.0 - t * t) * sigmoid;
            assert!((Activation::Mish.apply(x) - reference).abs() <= 1e-14 * (1.0 + x.abs()), "{x}");
            assert!((Activation::Mish.derivative(x) - d_reference).abs() <= 1e-13, "{x}");
        }
        assert_eq!(Activation::Mish.apply(-1e4), 0.0);
        assert_eq!(Activation::Mish.apply(1e4), 1e4);
    }

    #[test]
    fn linear_layout_size() {
        let spec = MlpSpec::new(5, vec![], 3);
        assert_eq!(init_params(&spec, 0).len(), 5 * 3 + 3);
    }

    #[test]
    fn one_hidden_layer_count() {
        let spec = MlpSpec::new(3, vec![8], 2);
        assert_eq!(spec.num_params(), 50);
        let with_norm = spec.clone().with_layer_norm(true);
        assert_eq!(with_norm.num_params(), 50 + 16);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(4, vec![16, 16], 2).with_layer_norm(true);
        assert_eq!(init_params(&spec, 7), init_params(&spec, 7));
        assert_ne!(init_params(&spec, 7), init_params(&spec, 8));
    }

    #[test]
    fn biases_start_at_zero() {
        let spec = MlpSpec::new(4, vec![6], 2);
        let p = init_params(&spec, 3);
        for (i, b) in p.layout.iter().enumerate() {
            if b.kind == BlockKind::Bias {
                assert!(p.block(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MlpSpec::new(0, vec![], 1).validate().is_err());
        assert!(MlpSpec::new(1, vec![0], 1).validate().is_err());
        assert!(MlpSpec::new(1, vec![], 1).with_dropout(1.0).validate().is_err());
    }

    #[test]
    fn serialization_roundtrip() {
        let spec = MlpSpec::new(3, vec![4], 2).with_layer_norm(true);
        let p = init_params(&spec, 11);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = ParamSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert!(ParamSet::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }
}
