//! Text formats: scenes (`.sc1`), offsets (`.off1`) and predictions (`.pred1`).
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is exact and writing the same value twice is byte-stable.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scene::{InstancePrediction, OffsetField, Scene, SceneData};

/// Scene lines start after the three header lines.
const SCENE_HEADER_LINES: usize = 3;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    consumed: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            consumed: 0,
        }
    }

    /// Next line as (1-based line number, tokens).
    fn next_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.consumed = i + 1;
                Ok((i + 1, l.split_whitespace().collect()))
            }
            None => Err(Error::parse(
                self.consumed + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn finish(mut self) -> Result<()> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Err(Error::parse(i + 1, "trailing data after last record"));
            }
        }
        Ok(())
    }
}

fn num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

fn expect_fields(toks: &[&str], n: usize, line: usize) -> Result<()> {
    if toks.len() != n {
        return Err(Error::parse(
            line,
            format!("field count mismatch: expected {n}, found {}", toks.len()),
        ));
    }
    Ok(())
}

fn expect_tag(toks: &[&str], tag: &str, line: usize) -> Result<()> {
    if toks.first() != Some(&tag) {
        return Err(Error::parse(
            line,
            format!("malformed header, expected `{tag}`"),
        ));
    }
    Ok(())
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut lines = Lines::new(text);
    let (ln, t) = lines.next_tokens("SC1 header")?;
    expect_tag(&t, "SC1", ln)?;
    expect_fields(&t, 3, ln)?;
    let n: usize = num(t[1], ln, "point count")?;
    let n_classes: usize = num(t[2], ln, "class count")?;
    if n_classes == 0 {
        return Err(Error::parse(ln, "class count must be positive"));
    }

    let (ln, t) = lines.next_tokens("STUFF header")?;
    expect_tag(&t, "STUFF", ln)?;
    if t.len() < 2 {
        return Err(Error::parse(ln, "malformed header, missing stuff count"));
    }
    let k: usize = num(t[1], ln, "stuff count")?;
    expect_fields(&t, k + 2, ln)?;
    let stuff_classes = t[2..]
        .iter()
        .map(|s| num::<i32>(s, ln, "stuff class"))
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = stuff_classes
        .iter()
        .find(|&&c| c < 0 || c as usize >= n_classes)
    {
        return Err(Error::parse(ln, format!("stuff class {c} out of range")));
    }

    let (ln, t) = lines.next_tokens("SCORES header")?;
    expect_tag(&t, "SCORES", ln)?;
    expect_fields(&t, 2, ln)?;
    let has_scores = match t[1] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::parse(
                ln,
                format!("SCORES flag must be 0 or 1, got `{other}`"),
            ))
        }
    };

    let fields = 8 + if has_scores { n_classes } else { 0 };
    let mut data = SceneData {
        n_classes,
        coords: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        sem_scores: has_scores.then(|| Vec::with_capacity(n * n_classes)),
        sem_labels: Vec::with_capacity(n),
        inst_ids: Vec::with_capacity(n),
        stuff_classes,
    };
    for _ in 0..n {
        let (ln, t) = lines.next_tokens("point record")?;
        expect_fields(&t, fields, ln)?;
        data.coords.push([
            num(t[0], ln, "coordinate")?,
            num(t[1], ln, "coordinate")?,
            num(t[2], ln, "coordinate")?,
        ]);
        data.colors.push([
            num(t[3], ln, "color")?,
            num(t[4], ln, "color")?,
            num(t[5], ln, "color")?,
        ]);
        data.sem_labels.push(num(t[6], ln, "semantic label")?);
        data.inst_ids.push(num(t[7], ln, "instance id")?);
        if let Some(scores) = data.sem_scores.as_mut() {
            for tok in &t[8..] {
                scores.push(num(tok, ln, "probability")?);
            }
        }
    }
    lines.finish()?;
    Scene::new(data).map_err(|e| match e {
        Error::Invariant { point, violation } => {
            Error::parse(point + SCENE_HEADER_LINES + 1, violation.to_string())
        }
        other => other,
    })
}

pub fn write_scene<W: Write>(scene: &Scene, mut w: W) -> std::io::Result<()> {
    writeln!(w, "SC1 {} {}", scene.n_points(), scene.n_classes())?;
    write!(w, "STUFF {}", scene.stuff_classes().len())?;
    for c in scene.stuff_classes() {
        write!(w, " {c}")?;
    }
    writeln!(w)?;
    writeln!(w, "SCORES {}", u8::from(scene.sem_scores().is_some()))?;
    for i in 0..scene.n_points() {
        let [x, y, z] = scene.coords()[i];
        let [r, g, b] = scene.colors()[i];
        write!(
            w,
            "{x} {y} {z} {r} {g} {b} {} {}",
            scene.sem_labels()[i],
            scene.inst_ids()[i]
        )?;
        if let Some(row) = scene.scores_of(i) {
            for p in row {
                write!(w, " {p}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scene(scene, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn parse_offsets(text: &str) -> Result<OffsetField> {
    let mut lines = Lines::new(text);
    let (ln, t) = lines.next_tokens("OFF1 header")?;
    expect_tag(&t, "OFF1", ln)?;
    expect_fields(&t, 2, ln)?;
    let n: usize = num(t[1], ln, "point count")?;
    let mut offsets = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, t) = lines.next_tokens("offset record")?;
        expect_fields(&t, 3, ln)?;
        let o: [f32; 3] = [
            num(t[0], ln, "offset")?,
            num(t[1], ln, "offset")?,
            num(t[2], ln, "offset")?,
        ];
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(ln, "non-finite offset"));
        }
        offsets.push(o);
    }
    lines.finish()?;
    OffsetField::new(offsets)
}

pub fn write_offsets<W: Write>(offsets: &OffsetField, mut w: W) -> std::io::Result<()> {
    writeln!(w, "OFF1 {}", offsets.len())?;
    for [x, y, z] in offsets.as_slice() {
        writeln!(w, "{x} {y} {z}")?;
    }
    w.flush()
}

pub fn load_offsets(path: impl AsRef<Path>) -> Result<OffsetField> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_offsets(&text)
}

pub fn save_offsets(offsets: &OffsetField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_offsets(offsets, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn parse_predictions(text: &str) -> Result<Vec<InstancePrediction>> {
    let mut lines = Lines::new(text);
    let (ln, t) = lines.next_tokens("PRED1 header")?;
    expect_tag(&t, "PRED1", ln)?;
    expect_fields(&t, 2, ln)?;
    let m: usize = num(t[1], ln, "prediction count")?;
    let mut preds = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, t) = lines.next_tokens("prediction header")?;
        expect_fields(&t, 3, ln)?;
        let class: i32 = num(t[0], ln, "class")?;
        let score: f64 = num(t[1], ln, "score")?;
        let n: usize = num(t[2], ln, "mask size")?;
        let (ln, t) = lines.next_tokens("prediction indices")?;
        expect_fields(&t, n, ln)?;
        let idx = t
            .iter()
            .map(|s| num::<u32>(s, ln, "point index"))
            .collect::<Result<Vec<_>>>()?;
        let pred = InstancePrediction::new(idx, class, score)
            .map_err(|e| Error::parse(ln, e.to_string()))?;
        preds.push(pred);
    }
    lines.finish()?;
    Ok(preds)
}

pub fn write_predictions<W: Write>(preds: &[InstancePrediction], mut w: W) -> std::io::Result<()> {
    writeln!(w, "PRED1 {}", preds.len())?;
    for p in preds {
        writeln!(w, "{} {} {}", p.class_id(), p.score(), p.point_idx().len())?;
        let mut first = true;
        for i in p.point_idx() {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            write!(w, "{i}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<InstancePrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

pub fn save_predictions(preds: &[InstancePrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(preds, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}
