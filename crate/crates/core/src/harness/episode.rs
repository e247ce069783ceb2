//! Episode action logs (JSON lines).
//!
//! The first line is a header, `{"meta": {"omega": 8, "angle_unit": "rad"}}`,
//! optionally with `"embeddings": ["w1.adpe", ...]` naming one embedding file
//! per window (relative paths resolve against the log's directory). Every
//! following non-empty line is `{"step": <int>, "action": [7 numbers]}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{AdpError, Result};
use crate::se3::{ActionIncrement, ActionWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub omega: usize,
    #[serde(default)]
    pub angle_unit: AngleUnit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<String>,
}

/// A validated action log. Angles are stored in radians regardless of the
/// unit the file was written in.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub steps: Vec<ActionIncrement>,
    /// Trailing steps that do not fill a whole window.
    pub dropped_steps: usize,
    /// Directory used to resolve relative embedding paths.
    pub base_dir: Option<PathBuf>,
}

impl EpisodeLog {
    pub fn new(omega: usize, steps: Vec<ActionIncrement>) -> Result<Self> {
        if omega == 0 {
            return Err(AdpError::invalid("omega must be positive"));
        }
        if steps.is_empty() {
            return Err(AdpError::invalid("episode has no steps"));
        }
        steps.iter().try_for_each(ActionIncrement::validate)?;
        Ok(Self {
            dropped_steps: steps.len() % omega,
            meta: EpisodeMeta {
                omega,
                angle_unit: AngleUnit::Rad,
                embeddings: Vec::new(),
            },
            steps,
            base_dir: None,
        })
    }

    pub fn omega(&self) -> usize {
        self.meta.omega
    }

    /// Consecutive, non-overlapping full windows; a trailing partial chunk is dropped.
    pub fn windows(&self) -> Vec<ActionWindow> {
        self.steps
            .chunks_exact(self.meta.omega)
            .enumerate()
            .map(|(i, chunk)| ActionWindow::new(i + 1, chunk.to_vec()))
            .collect()
    }

    pub fn window_count(&self) -> usize {
        self.steps.len() / self.meta.omega
    }

    /// Per-window embedding paths, resolved against the log directory.
    pub fn embedding_paths(&self) -> Vec<PathBuf> {
        self.meta
            .embeddings
            .iter()
            .map(|p| match &self.base_dir {
                Some(dir) if Path::new(p).is_relative() => dir.join(p),
                _ => PathBuf::from(p),
            })
            .collect()
    }

    /// Serializes as JSON lines, angles in radians.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = EpisodeMeta {
            angle_unit: AngleUnit::Rad,
            ..self.meta.clone()
        };
        writeln!(w, "{}", serde_json::json!({ "meta": meta }))?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{}",
                serde_json::json!({ "step": i, "action": s.to_array() })
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

fn schema(line: usize, message: impl Into<String>) -> AdpError {
    AdpError::Schema {
        line: Some(line),
        message: message.into(),
    }
}

/// Parses an episode log from JSON-lines text.
pub fn parse_episode(text: &str) -> Result<EpisodeLog> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let Some((header_line, header)) = lines.next() else {
        return Err(AdpError::Schema {
            line: None,
            message: "empty episode file".into(),
        });
    };
    let header: Value = serde_json::from_str(header).map_err(|e| AdpError::Parse {
        line: header_line,
        message: e.to_string(),
    })?;
    let meta = header
        .get("meta")
        .ok_or_else(|| schema(header_line, "first line must be a {\"meta\": ...} header"))?;
    let meta: EpisodeMeta =
        serde_json::from_value(meta.clone()).map_err(|e| schema(header_line, e.to_string()))?;
    if meta.omega == 0 {
        return Err(schema(header_line, "omega must be positive"));
    }

    let scale = match meta.angle_unit {
        AngleUnit::Rad => 1.0,
        AngleUnit::Deg => std::f64::consts::PI / 180.0,
    };
    let mut steps = Vec::new();
    let mut last_step: Option<i64> = None;
    for (n, line) in lines {
        let v: Value = serde_json::from_str(line).map_err(|e| AdpError::Parse {
            line: n,
            message: e.to_string(),
        })?;
        let step = v
            .get("step")
            .and_then(Value::as_i64)
            .ok_or_else(|| schema(n, "missing integer \"step\""))?;
        if last_step.is_some_and(|prev| step <= prev) {
            return Err(schema(
                n,
                format!("step {step} is not after step {}", last_step.unwrap()),
            ));
        }
        last_step = Some(step);
        let action = v
            .get("action")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(n, "missing \"action\" array"))?;
        if action.len() != 7 {
            return Err(schema(
                n,
                format!("action has {} values, expected 7", action.len()),
            ));
        }
        let mut a = [0.0f64; 7];
        for (slot, x) in a.iter_mut().zip(action) {
            *slot = x
                .as_f64()
                .ok_or_else(|| schema(n, format!("action entry {x} is not a number")))?;
        }
        for angle in &mut a[3..6] {
            *angle *= scale;
        }
        let inc = ActionIncrement::from_array(a);
        inc.validate().map_err(|e| schema(n, e.to_string()))?;
        steps.push(inc);
    }
    if steps.is_empty() {
        return Err(AdpError::Schema {
            line: None,
            message: "episode has no action steps".into(),
        });
    }
    let dropped_steps = steps.len() % meta.omega;
    if dropped_steps > 0 {
        warn!(
            "{} trailing step(s) do not fill a window of {} and are dropped",
            dropped_steps, meta.omega
        );
    }
    Ok(EpisodeLog {
        meta,
        steps,
        dropped_steps,
        base_dir: None,
    })
}

pub fn load_episode(path: impl AsRef<Path>) -> Result<EpisodeLog> {
    let path = path.as_ref();
    let mut log = parse_episode(&fs::read_to_string(path)?)?;
    log.base_dir = path.parent().map(Path::to_path_buf);
    Ok(log)
}
