//! Versioned weight container.
//!
//! ```text
//! gnnroute-checkpoint 1
//! meta <key> <value>
//! array <name> <dim> [<dim> ...]
//! end
//! <little-endian f64 payload, arrays in header order>
//! ```

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const FORMAT_MAGIC: &str = "gnnroute-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("missing {0} in checkpoint")]
    Missing(String),
    #[error("array {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace)
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(valid_token(key), "meta key must be one token: {key:?}");
        assert!(!value.contains('\n'), "meta value must be one line");
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let raw = self
            .meta(key)
            .ok_or_else(|| CheckpointError::Missing(format!("meta key {key}")))?;
        raw.parse()
            .map_err(|_| CheckpointError::Format(format!("meta {key}: cannot parse {raw:?}")))
    }

    pub fn push_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert!(valid_token(&name), "array name must be one token: {name:?}");
        assert_eq!(shape.iter().product::<usize>(), data.len(), "array {name}");
        self.arrays.push(NamedArray { name, shape, data });
    }

    pub fn array(&self, name: &str, shape: &[usize]) -> Result<&[f64], CheckpointError> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::Missing(format!("array {name}")))?;
        if a.shape != shape {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: a.shape.clone(),
            });
        }
        Ok(&a.data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for a in &self.arrays {
            let dims: Vec<String> = a.shape.iter().map(usize::to_string).collect();
            writeln!(w, "array {} {}", a.name, dims.join(" "))?;
        }
        writeln!(w, "end")?;
        for a in &self.arrays {
            for v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Checkpoint, CheckpointError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<(), CheckpointError> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(CheckpointError::Format("unexpected end of header".into()));
            }
            if line.ends_with('\n') {
                line.pop();
            }
            Ok(())
        };

        next_line(&mut r, &mut line)?;
        let version = line
            .strip_prefix(FORMAT_MAGIC)
            .and_then(|rest| rest.trim().parse::<u32>().ok())
            .ok_or_else(|| CheckpointError::Format("bad magic line".into()))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }

        let mut ckpt = Checkpoint::default();
        let mut shapes = Vec::new();
        loop {
            next_line(&mut r, &mut line)?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("array ") {
                let mut parts = rest.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| CheckpointError::Format("array without name".into()))?;
                let shape = parts
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| CheckpointError::Format(format!("bad shape for {name}")))?;
                shapes.push((name.to_string(), shape));
            } else {
                return Err(CheckpointError::Format(format!("unexpected header line {line:?}")));
            }
        }

        let mut buf = [0u8; 8];
        for (name, shape) in shapes {
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf).map_err(|_| {
                    CheckpointError::Format(format!("payload truncated in array {name}"))
                })?;
                data.push(f64::from_le_bytes(buf));
            }
            ckpt.arrays.push(NamedArray { name, shape, data });
        }
        if r.read(&mut buf)? != 0 {
            return Err(CheckpointError::Format("trailing bytes after payload".into()));
        }
        Ok(ckpt)
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, |w| self.write_to(w))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::read_from(fs::File::open(path)?)
    }
}

/// Write-temp-then-rename.
pub fn write_atomic<F>(path: &Path, write: F) -> io::Result<()>
where
    F: FnOnce(&mut io::BufWriter<&mut tempfile::NamedTempFile>) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = io::BufWriter::new(&mut tmp);
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("hidden", 4);
        c.set_meta("note", "two words");
        c.push_array("a.weight", vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]);
        c.push_array("a.bias", vec![2], vec![0.1, 0.2]);
        c
    }

    #[test]
    fn round_trip() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        let text_end = bytes.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        assert_eq!(bytes.len() - text_end, 8 * 8);
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.meta("note"), Some("two words"));
        assert_eq!(back.meta_parsed::<usize>("hidden").unwrap(), 4);
    }

    #[test]
    fn shape_validation() {
        let c = sample();
        assert!(c.array("a.bias", &[2]).is_ok());
        assert!(matches!(c.array("a.bias", &[3]), Err(CheckpointError::Shape { .. })));
        assert!(matches!(c.array("nope", &[1]), Err(CheckpointError::Missing(_))));
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(&extra[..]).is_err());
        let bumped = String::from_utf8_lossy(&bytes).replacen("checkpoint 1", "checkpoint 9", 1);
        assert!(matches!(
            Checkpoint::read_from(bumped.as_bytes()),
            Err(CheckpointError::Version(9))
        ));
    }

    #[test]
    fn atomic_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
