//! Versioned text container for trained models.
//!
//! ```text
//! NAIKF-WEIGHTS v1
//! dtype f32
//! network in_channels=6 conv_channels=32,64,128 ...
//! training loss=mse huber_delta=1 epochs=40 ...
//! tensor conv1.weight 32 6 5
//! <row-major values, one line per innermost row>
//! ...
//! tensor input_scale 6
//! tensor target_scale 6
//! end
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::model::{InputNorm, LossKind, NoiseModel, TrainConfig};
use super::network::{NetworkConfig, NetworkWeights, Tensor};
use crate::error::{Error, Result};

pub const FILE_MAGIC: &str = "NAIKF-WEIGHTS v1";
const MAGIC_PREFIX: &str = "NAIKF-WEIGHTS ";

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_tensor<T: std::fmt::Display>(out: &mut String, name: &str, shape: &[usize], data: &[T]) {
    let dims = shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(out, "tensor {name} {dims}").unwrap();
    let row = shape.last().copied().unwrap_or(1).max(1);
    for chunk in data.chunks(row) {
        let line = chunk.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "{line}").unwrap();
    }
}

/// Serializes a model to the text format.
pub fn model_to_string(m: &NoiseModel) -> String {
    let c = &m.weights.config;
    let t = &m.train_config;
    let mut s = String::new();
    writeln!(s, "{FILE_MAGIC}").unwrap();
    writeln!(s, "dtype f32").unwrap();
    writeln!(
        s,
        "network in_channels={} conv_channels={} hidden={} outputs={} kernel={} leaky_slope={} bn_eps={} bn_momentum={} dropout={} eps_min={}",
        c.in_channels,
        join(&c.conv_channels),
        join(&c.hidden),
        c.outputs,
        c.kernel,
        c.leaky_slope,
        c.bn_eps,
        c.bn_momentum,
        c.dropout,
        c.eps_min
    )
    .unwrap();
    let delta = match t.loss {
        LossKind::Mse => 0.0,
        LossKind::Huber { delta } => delta,
    };
    writeln!(
        s,
        "training loss={} huber_delta={} epochs={} lr={} dropout={} batch_size={} seed={} step={}",
        t.loss.name(),
        delta,
        t.epochs,
        t.lr,
        t.dropout,
        t.batch_size,
        t.seed,
        t.step
    )
    .unwrap();
    for tensor in &m.weights.tensors {
        write_tensor(&mut s, &tensor.name, &tensor.shape, &tensor.data);
    }
    write_tensor(&mut s, "input_scale", &[6], &m.input_norm.scale);
    write_tensor(&mut s, "target_scale", &[6], &m.target_scale);
    writeln!(s, "end").unwrap();
    s
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| fmt_err(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let items: Vec<usize> = v.split(',').map(|x| parse(key, x)).collect::<Result<_>>()?;
    items.try_into().map_err(|_| fmt_err(format!("`{key}` needs {N} entries")))
}

fn key_values<'a>(line: &'a str, tag: &str) -> Result<HashMap<&'a str, &'a str>> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| fmt_err(format!("expected `{tag}` line, found `{line}`")))?;
    rest.split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| fmt_err(format!("bad field `{kv}`"))))
        .collect()
}

fn field<'a>(kv: &HashMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    kv.get(key).copied().ok_or_else(|| fmt_err(format!("missing field `{key}`")))
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    text: Vec<String>,
}

/// Parses the text format.
pub fn model_from_str(src: &str) -> Result<NoiseModel> {
    let mut lines = src.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    let header = lines.next().ok_or_else(|| fmt_err("empty file"))?;
    if header != FILE_MAGIC {
        return Err(match header.strip_prefix(MAGIC_PREFIX) {
            Some(v) => Error::Version(v.to_string()),
            None => fmt_err(format!("not a weight file: `{header}`")),
        });
    }
    let dtype = lines.next().ok_or_else(|| fmt_err("missing dtype"))?;
    if dtype != "dtype f32" {
        return Err(fmt_err(format!("unsupported `{dtype}`")));
    }
    let net = key_values(lines.next().ok_or_else(|| fmt_err("missing network line"))?, "network")?;
    let config = NetworkConfig {
        in_channels: parse("in_channels", field(&net, "in_channels")?)?,
        conv_channels: parse_list("conv_channels", field(&net, "conv_channels")?)?,
        hidden: parse_list("hidden", field(&net, "hidden")?)?,
        outputs: parse("outputs", field(&net, "outputs")?)?,
        kernel: parse("kernel", field(&net, "kernel")?)?,
        leaky_slope: parse("leaky_slope", field(&net, "leaky_slope")?)?,
        bn_eps: parse("bn_eps", field(&net, "bn_eps")?)?,
        bn_momentum: parse("bn_momentum", field(&net, "bn_momentum")?)?,
        dropout: parse("dropout", field(&net, "dropout")?)?,
        eps_min: parse("eps_min", field(&net, "eps_min")?)?,
    };
    let tr = key_values(lines.next().ok_or_else(|| fmt_err("missing training line"))?, "training")?;
    let delta: f64 = parse("huber_delta", field(&tr, "huber_delta")?)?;
    let loss = match field(&tr, "loss")? {
        "mse" => LossKind::Mse,
        "huber" => LossKind::Huber { delta },
        other => return Err(fmt_err(format!("unknown loss `{other}`"))),
    };
    let train_config = TrainConfig {
        loss,
        epochs: parse("epochs", field(&tr, "epochs")?)?,
        lr: parse("lr", field(&tr, "lr")?)?,
        dropout: parse("dropout", field(&tr, "dropout")?)?,
        batch_size: parse("batch_size", field(&tr, "batch_size")?)?,
        seed: parse("seed", field(&tr, "seed")?)?,
        step: parse("step", field(&tr, "step")?)?,
    };

    let mut raw = Vec::new();
    let mut ended = false;
    while let Some(line) = lines.next() {
        if line == "end" {
            ended = true;
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(fmt_err(format!("expected tensor header, found `{line}`")));
        }
        let name = parts.next().ok_or_else(|| fmt_err("tensor without name"))?.to_string();
        let shape: Vec<usize> = parts.map(|d| parse("shape", d)).collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let mut text = Vec::with_capacity(count);
        while text.len() < count {
            match lines.peek() {
                Some(l) if !l.starts_with("tensor") && *l != "end" => {
                    text.extend(lines.next().unwrap().split_whitespace().map(str::to_string));
                }
                _ => break,
            }
        }
        if text.len() != count {
            return Err(fmt_err(format!(
                "tensor `{name}` shape {shape:?} needs {count} values, found {}",
                text.len()
            )));
        }
        let data = text.iter().map(|v| parse(&name, v)).collect::<Result<_>>()?;
        raw.push(RawTensor { name, shape, data, text });
    }
    if !ended {
        return Err(fmt_err("missing `end`"));
    }

    let mut take_scale = |name: &str| -> Result<[f64; 6]> {
        let pos = raw
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| fmt_err(format!("missing tensor `{name}`")))?;
        let t = raw.remove(pos);
        t.data.try_into().map_err(|_| fmt_err(format!("`{name}` must have 6 entries")))
    };
    let input_scale = take_scale("input_scale")?;
    let target_scale = take_scale("target_scale")?;
    let mut tensors = Vec::with_capacity(raw.len());
    for t in raw {
        let data = t.text.iter().map(|v| parse::<f32>(&t.name, v)).collect::<Result<_>>()?;
        tensors.push(Tensor { name: t.name, shape: t.shape, data });
    }
    let weights = NetworkWeights { config, tensors };
    weights.validate()?;
    Ok(NoiseModel { weights, input_norm: InputNorm { scale: input_scale }, target_scale, train_config })
}

pub fn save_model(m: &NoiseModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NoiseModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NoiseModel {
        let config = NetworkConfig { conv_channels: [3, 4, 5], hidden: [4, 3], ..NetworkConfig::default() };
        NoiseModel {
            weights: NetworkWeights::init(&config, 9),
            input_norm: InputNorm { scale: [0.1, 0.2, 0.3, 1e-7, 2.5, 3.0] },
            target_scale: [1e-14, 1e-14, 2e-14, 0.25, 0.25, 1.0 / 3.0],
            train_config: TrainConfig { loss: LossKind::Huber { delta: 1.0 }, seed: 4, ..TrainConfig::default() },
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = sample();
        let s1 = model_to_string(&m);
        let back = model_from_str(&s1).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_string(&back), s1);
    }

    #[test]
    fn corrupt_shape_is_format_error() {
        let s = model_to_string(&sample()).replacen("tensor conv1.bias 3", "tensor conv1.bias 4", 1);
        assert!(matches!(model_from_str(&s), Err(Error::Format(_))));
    }

    #[test]
    fn other_version_is_version_error() {
        let s = model_to_string(&sample()).replacen(FILE_MAGIC, "NAIKF-WEIGHTS v2", 1);
        assert!(matches!(model_from_str(&s), Err(Error::Version(v)) if v == "v2"));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let s = model_to_string(&sample());
        let cut = &s[..s.len() / 2];
        assert!(matches!(model_from_str(cut), Err(Error::Format(_))));
    }
}
