//! Map/reduce loop-nest programs for the CGRA grid and their interpreter.

use std::fmt::Write as _;

use super::fixed::QFormat;
use super::{Backend, CodegenError, GeneratedArtifact};
use crate::backends::{estimate_cgra_mlp, CgraTarget};
use crate::models::mlp::{argmax, Dense};
use crate::models::{Activation, MlpModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Tanh,
}

impl Act {
    fn name(self) -> &'static str {
        match self {
            Act::None => "none",
            Act::Relu => "relu",
            Act::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Option<Act> {
        match s {
            "none" => Some(Act::None),
            "relu" => Some(Act::Relu),
            "tanh" => Some(Act::Tanh),
            _ => None,
        }
    }
}

impl From<Activation> for Act {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Relu => Act::Relu,
            Activation::Tanh => Act::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgraLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub lanes: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub act: Act,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgraProgram {
    pub format: QFormat,
    pub inputs: usize,
    pub layers: Vec<CgraLayer>,
    /// Output slices `[lo, hi)` reduced by argmax, one per task head.
    pub heads: Vec<(usize, usize)>,
    pub weights: Vec<i64>,
}

/// Emits a single-head program for `model`, quantizing weights to `format`.
pub fn emit_cgra_mlp(
    model: &MlpModel,
    target: &CgraTarget,
    format: QFormat,
) -> Result<GeneratedArtifact, CodegenError> {
    emit_cgra_heads(model, &[model.output_width()], target, format)
}

/// Emits a program whose output layer is split into consecutive heads of
/// the given sizes, each reduced by its own argmax.
pub fn emit_cgra_heads(
    model: &MlpModel,
    head_sizes: &[usize],
    target: &CgraTarget,
    format: QFormat,
) -> Result<GeneratedArtifact, CodegenError> {
    if !model.is_finite() {
        return Err(CodegenError::Unsupported("model has non-finite parameters".into()));
    }
    if head_sizes.iter().sum::<usize>() != model.output_width() || head_sizes.contains(&0) {
        return Err(CodegenError::Unsupported(format!(
            "heads {head_sizes:?} do not partition {} outputs",
            model.output_width()
        )));
    }
    let lanes = target.lanes_per_cu as usize;
    let mut weights = Vec::new();
    let mut text = String::new();
    let _ = writeln!(text, "# generated cgra program");
    let _ = writeln!(text, "program cgra v1");
    let _ = writeln!(text, "format {format}");
    let _ = writeln!(text, "input {}", model.input_width());
    let n_layers = model.hidden.len() + 1;
    for (l, layer) in model.layers().enumerate() {
        let act = if l + 1 == n_layers {
            Act::None
        } else {
            Act::from(model.activation)
        };
        let w_off = weights.len();
        push_quantized(&mut weights, &layer.weights, format, l, "w")?;
        let b_off = weights.len();
        push_quantized(&mut weights, &layer.bias, format, l, "b")?;
        write_layer(&mut text, l, layer, lanes, w_off, b_off, act);
    }
    let mut lo = 0;
    for size in head_sizes {
        let _ = writeln!(text, "argmax {lo}..{}", lo + size);
        lo += size;
    }
    let (resources, perf) = estimate_cgra_mlp(&model.topology(), target)?;
    Ok(GeneratedArtifact {
        backend: Backend::Cgra,
        format,
        program_text: text,
        weights,
        resources,
        perf,
    })
}

fn push_quantized(
    out: &mut Vec<i64>,
    values: &[f64],
    format: QFormat,
    layer: usize,
    kind: &str,
) -> Result<(), CodegenError> {
    for (i, &v) in values.iter().enumerate() {
        let raw = format.quantize_exact_range(v).ok_or_else(|| CodegenError::Overflow {
            name: format!("{kind}{layer}[{i}]"),
            value: v,
        })?;
        out.push(raw);
    }
    Ok(())
}

fn write_layer(text: &mut String, l: usize, layer: &Dense, lanes: usize, w_off: usize, b_off: usize, act: Act) {
    let chunks = layer.inputs.div_ceil(lanes);
    let _ = writeln!(text, "layer {l} in {} out {}", layer.inputs, layer.outputs);
    let _ = writeln!(text, "  const w{l} offset {w_off} len {}", layer.weights.len());
    let _ = writeln!(text, "  const b{l} offset {b_off} len {}", layer.bias.len());
    let _ = writeln!(text, "  map neuron 0..{}", layer.outputs);
    let _ = writeln!(text, "    map chunk 0..{chunks} lanes {lanes} mul w{l}");
    let _ = writeln!(text, "    reduce add");
    let _ = writeln!(text, "    add b{l}");
    let _ = writeln!(text, "    act {}", act.name());
    let _ = writeln!(text, "  end");
    let _ = writeln!(text, "  store_doublebuf buf{}", l % 2);
    let _ = writeln!(text, "end");
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Lines<'a> {
        let it: Box<dyn Iterator<Item = (usize, Vec<&'a str>)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| {
                    (
                        i + 1,
                        l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>(),
                    )
                })
                .filter(|(_, toks)| !toks.is_empty()),
        );
        Lines { inner: it.peekable() }
    }

    fn next(&mut self) -> Result<(usize, Vec<&'a str>), CodegenError> {
        self.inner.next().ok_or_else(|| CodegenError::Malformed {
            line: 0,
            message: "unexpected end of program".into(),
        })
    }

    fn peek_word(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, t)| t[0])
    }

    /// Next line, which must start with exactly the given literal words;
    /// returns the remaining tokens.
    fn expect(&mut self, words: &[&str]) -> Result<(usize, Vec<&'a str>), CodegenError> {
        let (line, toks) = self.next()?;
        if toks.len() < words.len() || toks[..words.len()] != *words {
            return Err(malformed(
                line,
                format!("expected `{}`, found `{}`", words.join(" "), toks.join(" ")),
            ));
        }
        Ok((line, toks[words.len()..].to_vec()))
    }
}

pub(crate) fn malformed(line: usize, message: String) -> CodegenError {
    CodegenError::Malformed { line, message }
}

pub(crate) fn num<T: std::str::FromStr>(line: usize, tok: Option<&&str>) -> Result<T, CodegenError> {
    let tok = tok.ok_or_else(|| malformed(line, "missing number".into()))?;
    tok.parse()
        .map_err(|_| malformed(line, format!("`{tok}` is not a number")))
}

pub(crate) fn range(line: usize, tok: Option<&&str>) -> Result<(i64, i64), CodegenError> {
    let tok = tok.ok_or_else(|| malformed(line, "missing range".into()))?;
    let (a, b) = tok
        .split_once("..")
        .ok_or_else(|| malformed(line, format!("`{tok}` is not a range")))?;
    let p = |s: &str| {
        s.parse::<i64>()
            .map_err(|_| malformed(line, format!("`{tok}` is not a range")))
    };
    Ok((p(a)?, p(b)?))
}

fn keyword(line: usize, toks: &[&str], at: usize, word: &str) -> Result<(), CodegenError> {
    if toks.get(at) != Some(&word) {
        return Err(malformed(line, format!("expected `{word}`")));
    }
    Ok(())
}

/// Parses program text against a weight table.
pub fn parse_cgra(text: &str, weights: &[i64]) -> Result<CgraProgram, CodegenError> {
    let mut lines = Lines::new(text);
    lines.expect(&["program", "cgra", "v1"])?;
    let (line, rest) = lines.expect(&["format"])?;
    let format: QFormat = rest
        .first()
        .ok_or_else(|| malformed(line, "missing format".into()))?
        .parse()
        .map_err(|m| malformed(line, m))?;
    let (line, rest) = lines.expect(&["input"])?;
    let inputs: usize = num(line, rest.first())?;
    let mut layers = Vec::new();
    let mut width = inputs;
    while lines.peek_word() == Some("layer") {
        let (line, t) = lines.expect(&["layer"])?;
        let idx: usize = num(line, t.first())?;
        if idx != layers.len() {
            return Err(malformed(line, format!("layer {idx} out of order")));
        }
        keyword(line, &t, 1, "in")?;
        let n_in: usize = num(line, t.get(2))?;
        keyword(line, &t, 3, "out")?;
        let n_out: usize = num(line, t.get(4))?;
        if n_in != width || n_out == 0 {
            return Err(malformed(
                line,
                format!("layer {idx} reads {n_in} values but {width} are available"),
            ));
        }
        let mut constant = |name: String, len: usize| -> Result<usize, CodegenError> {
            let (line, t) = lines.expect(&["const", &name])?;
            keyword(line, &t, 0, "offset")?;
            let off: usize = num(line, t.get(1))?;
            keyword(line, &t, 2, "len")?;
            let l: usize = num(line, t.get(3))?;
            if l != len || off + l > weights.len() {
                return Err(malformed(
                    line,
                    format!(
                        "constant {name} has length {l} at offset {off}; need {len} within {} weights",
                        weights.len()
                    ),
                ));
            }
            Ok(off)
        };
        let weight_offset = constant(format!("w{idx}"), n_in * n_out)?;
        let bias_offset = constant(format!("b{idx}"), n_out)?;
        let (line, t) = lines.expect(&["map", "neuron"])?;
        if range(line, t.first())? != (0, n_out as i64) {
            return Err(malformed(line, format!("neuron map must cover 0..{n_out}")));
        }
        let (line, t) = lines.expect(&["map", "chunk"])?;
        let (c0, c1) = range(line, t.first())?;
        keyword(line, &t, 1, "lanes")?;
        let lanes: usize = num(line, t.get(2))?;
        if lanes == 0 || c0 != 0 || c1 as usize != n_in.div_ceil(lanes) {
            return Err(malformed(line, format!("chunk map must cover 0..ceil({n_in}/{lanes})")));
        }
        if t.get(3) != Some(&"mul") || t.get(4).copied() != Some(format!("w{idx}").as_str()) {
            return Err(malformed(line, format!("chunk map must multiply by w{idx}")));
        }
        lines.expect(&["reduce", "add"])?;
        lines.expect(&["add", &format!("b{idx}")])?;
        let (line, t) = lines.expect(&["act"])?;
        let act = t
            .first()
            .and_then(|a| Act::parse(a))
            .ok_or_else(|| malformed(line, "unknown activation".into()))?;
        lines.expect(&["end"])?;
        lines.expect(&["store_doublebuf", &format!("buf{}", idx % 2)])?;
        lines.expect(&["end"])?;
        layers.push(CgraLayer {
            inputs: n_in,
            outputs: n_out,
            lanes,
            weight_offset,
            bias_offset,
            act,
        });
        width = n_out;
    }
    if layers.is_empty() {
        return Err(malformed(0, "program has no layers".into()));
    }
    let mut heads = Vec::new();
    let mut covered = 0;
    while lines.peek_word() == Some("argmax") {
        let (line, t) = lines.expect(&["argmax"])?;
        let (lo, hi) = range(line, t.first())?;
        if lo as usize != covered || hi <= lo || hi as usize > width {
            return Err(malformed(
                line,
                format!("argmax {lo}..{hi} does not continue the output partition"),
            ));
        }
        covered = hi as usize;
        heads.push((lo as usize, hi as usize));
    }
    if covered != width {
        return Err(malformed(0, format!("argmax heads cover {covered} of {width} outputs")));
    }
    if let Ok((line, t)) = lines.next() {
        return Err(malformed(line, format!("unexpected `{}`", t.join(" "))));
    }
    Ok(CgraProgram {
        format,
        inputs,
        layers,
        heads,
        weights: weights.to_vec(),
    })
}

impl CgraProgram {
    /// Raw fixed-point outputs of the last layer.
    pub fn outputs(&self, row: &[f64]) -> Result<Vec<i64>, CodegenError> {
        if row.len() != self.inputs {
            return Err(CodegenError::Width {
                expected: self.inputs,
                found: row.len(),
            });
        }
        let q = self.format;
        let mut cur: Vec<i64> = row.iter().map(|&x| q.quantize(x)).collect();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.clear();
            for o in 0..layer.outputs {
                let w = &self.weights[layer.weight_offset + o * layer.inputs..][..layer.inputs];
                let mut acc = 0;
                for (xs, ws) in cur.chunks(layer.lanes).zip(w.chunks(layer.lanes)) {
                    let partial = xs.iter().zip(ws).fold(0, |s, (&x, &wv)| q.add(s, q.mul(x, wv)));
                    acc = q.add(acc, partial);
                }
                acc = q.add(acc, self.weights[layer.bias_offset + o]);
                next.push(match layer.act {
                    Act::None => acc,
                    Act::Relu => acc.max(0),
                    Act::Tanh => q.quantize(q.to_f64(acc).tanh()),
                });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Class per head.
    pub fn classify(&self, row: &[f64]) -> Result<Vec<usize>, CodegenError> {
        let out = self.outputs(row)?;
        Ok(self
            .heads
            .iter()
            .map(|&(lo, hi)| argmax(&out[lo..hi].iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_to_one() -> MlpModel {
        let mut m = MlpModel::init(&[2, 1], Activation::Relu, 0);
        m.output.weights = vec![0.5, -0.25];
        m.output.bias = vec![0.0];
        m
    }

    #[test]
    fn hand_computed_dot_product() {
        let art = emit_cgra_mlp(&two_to_one(), &CgraTarget::default(), QFormat::Q8_8).unwrap();
        let prog = parse_cgra(&art.program_text, &art.weights).unwrap();
        let out = prog.outputs(&[1.0, 1.0]).unwrap();
        // 0.5 - 0.25 = 0.25 -> raw 64
        assert_eq!(out, vec![64]);
        assert_eq!(QFormat::Q8_8.to_f64(out[0]), 0.25);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut m = MlpModel::init(&[3, 4, 2], Activation::Tanh, 1);
        m.set_flat_params(&vec![0.0; m.param_count()]).unwrap();
        let art = emit_cgra_mlp(&m, &CgraTarget::default(), QFormat::Q8_8).unwrap();
        let prog = parse_cgra(&art.program_text, &art.weights).unwrap();
        assert_eq!(prog.outputs(&[1.0, -2.0, 3.0]).unwrap(), vec![0, 0]);
        assert_eq!(prog.classify(&[1.0, -2.0, 3.0]).unwrap(), vec![0]);
    }

    #[test]
    fn overflowing_weight_is_named() {
        let mut m = two_to_one();
        m.output.weights[1] = 300.0;
        match emit_cgra_mlp(&m, &CgraTarget::default(), QFormat::Q8_8) {
            Err(CodegenError::Overflow { name, .. }) => assert_eq!(name, "w0[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emission_is_deterministic_and_charged_like_estimate() {
        let m = MlpModel::init(&[7, 8, 2], Activation::Relu, 4);
        let a = emit_cgra_mlp(&m, &CgraTarget::default(), QFormat::Q8_8).unwrap();
        let b = emit_cgra_mlp(&m, &CgraTarget::default(), QFormat::Q8_8).unwrap();
        assert_eq!(a, b);
        let (res, perf) = estimate_cgra_mlp(&[7, 8, 2], &CgraTarget::default()).unwrap();
        assert_eq!((a.resources, a.perf), (res, perf));
    }

    #[test]
    fn malformed_programs_rejected() {
        let art = emit_cgra_mlp(&two_to_one(), &CgraTarget::default(), QFormat::Q8_8).unwrap();
        let text = art.program_text.replace("reduce add", "reduce max");
        assert!(matches!(
            parse_cgra(&text, &art.weights),
            Err(CodegenError::Malformed { .. })
        ));
        assert!(parse_cgra(&art.program_text, &art.weights[..1]).is_err());
        let prog = parse_cgra(&art.program_text, &art.weights).unwrap();
        assert!(matches!(
            prog.outputs(&[1.0]),
            Err(CodegenError::Width { expected: 2, found: 1 })
        ));
    }
}
