//! Dataset manifests, triplet assembly and patch archives.
//!
//! A manifest is line-oriented text: `hr_path[,boundary_path...]` per line,
//! `#` starts a comment, blank lines are skipped. Paths are resolved
//! relative to the manifest file's directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{
    boundary_targets, crop_to_multiple, load_png, make_lr, ImagePlane, TrainingTriplet,
};
use crate::model_io::{read_container, write_container, ARCHIVE_PROFILE};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub hr_path: PathBuf,
    pub boundary_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let hr = fields.next().unwrap();
        entries.push(ManifestEntry {
            hr_path: base.join(hr),
            boundary_paths: fields.filter(|f| !f.is_empty()).map(|f| base.join(f)).collect(),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(Manifest { entries })
}

/// One evaluation/training image: luminance HR plane (cropped to a scale
/// multiple) plus its boundary planes (annotations or synthetic fallback).
#[derive(Debug, Clone)]
pub struct SourceImage<T> {
    pub name: String,
    pub hr: ImagePlane<T>,
    pub boundaries: Vec<ImagePlane<T>>,
    /// True when the boundary planes came from annotation files.
    pub annotated: bool,
}

/// Load every manifest entry. Missing or unreadable files are reported
/// together, one message per file.
pub fn load_source_images<T: Scalar>(
    manifest: &Manifest,
    scale: usize,
) -> Result<Vec<SourceImage<T>>> {
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        match load_one(entry, scale) {
            Ok(img) => images.push(img),
            Err(e) => failures.push(format!("{}: {e}", entry.hr_path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::invalid(failures.join("\n")));
    }
    Ok(images)
}

fn load_one<T: Scalar>(entry: &ManifestEntry, scale: usize) -> Result<SourceImage<T>> {
    let hr_full = load_png::<T>(&entry.hr_path)?.luminance();
    let hr = crop_to_multiple(&hr_full, scale);
    if hr.height < scale || hr.width < scale {
        return Err(Error::invalid(format!(
            "image {}x{} too small for scale {scale}",
            hr_full.height, hr_full.width
        )));
    }
    let mut annotations = Vec::new();
    for bp in &entry.boundary_paths {
        let b = load_png::<T>(bp)?.luminance();
        if b.height < hr.height || b.width < hr.width {
            return Err(Error::invalid(format!(
                "boundary {} is {}x{}, smaller than HR {}x{}",
                bp.display(),
                b.height,
                b.width,
                hr.height,
                hr.width
            )));
        }
        annotations.push(b.crop(0, 0, hr.height, hr.width));
    }
    let annotated = !annotations.is_empty();
    let boundaries = boundary_targets(&annotations, &hr);
    let name = entry
        .hr_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| entry.hr_path.display().to_string());
    Ok(SourceImage {
        name,
        hr,
        boundaries,
        annotated,
    })
}

/// Build the full-image triplet for a source image.
pub fn image_triplet<T: Scalar>(img: &SourceImage<T>, scale: usize) -> Result<TrainingTriplet<T>> {
    let lr = make_lr(&img.hr, scale)?;
    let t = TrainingTriplet {
        lr,
        hr: img.hr.clone(),
        boundaries: img.boundaries.clone(),
    };
    t.validate(scale)?;
    Ok(t)
}

fn plane_record<T: Scalar>(name: String, p: &ImagePlane<T>) -> (String, Vec<usize>, Vec<f32>) {
    (
        name,
        vec![p.height, p.width],
        p.data.iter().map(|v| v.as_f32()).collect(),
    )
}

pub fn write_patch_archive<T: Scalar>(
    path: &Path,
    scale: usize,
    triplets: &[TrainingTriplet<T>],
) -> Result<()> {
    let mut records = Vec::new();
    for (i, t) in triplets.iter().enumerate() {
        records.push(plane_record(format!("lr/{i}"), &t.lr));
        records.push(plane_record(format!("hr/{i}"), &t.hr));
        for (j, b) in t.boundaries.iter().enumerate() {
            records.push(plane_record(format!("b/{i}/{j}"), b));
        }
    }
    write_container(path, scale as u8, ARCHIVE_PROFILE, &records)
}

pub fn read_patch_archive<T: Scalar>(path: &Path) -> Result<(usize, Vec<TrainingTriplet<T>>)> {
    let c = read_container(path)?;
    if c.profile != ARCHIVE_PROFILE {
        return Err(Error::CorruptModel(
            "file is a model, not a patch archive".into(),
        ));
    }
    let scale = c.scale as usize;
    let mut lrs: Vec<Option<ImagePlane<T>>> = Vec::new();
    let mut hrs: Vec<Option<ImagePlane<T>>> = Vec::new();
    let mut bounds: Vec<Vec<ImagePlane<T>>> = Vec::new();
    let grow = |n: usize, lrs: &mut Vec<Option<ImagePlane<T>>>,
                hrs: &mut Vec<Option<ImagePlane<T>>>,
                bounds: &mut Vec<Vec<ImagePlane<T>>>| {
        while lrs.len() <= n {
            lrs.push(None);
            hrs.push(None);
            bounds.push(Vec::new());
        }
    };
    for rec in &c.records {
        if rec.dims.len() != 2 {
            return Err(Error::CorruptModel(format!(
                "record {}: patch planes must be rank 2",
                rec.name
            )));
        }
        let plane = ImagePlane::new(
            rec.dims[0],
            rec.dims[1],
            rec.values.iter().map(|&v| T::from_f32(v)).collect(),
        )?;
        let parts: Vec<&str> = rec.name.split('/').collect();
        let bad = || Error::CorruptModel(format!("unexpected record name {}", rec.name));
        let idx: usize = parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        grow(idx, &mut lrs, &mut hrs, &mut bounds);
        match parts[0] {
            "lr" => lrs[idx] = Some(plane),
            "hr" => hrs[idx] = Some(plane),
            "b" => bounds[idx].push(plane),
            _ => return Err(bad()),
        }
    }
    let mut triplets = Vec::with_capacity(lrs.len());
    for (i, (lr, hr)) in lrs.into_iter().zip(hrs).enumerate() {
        let t = TrainingTriplet {
            lr: lr.ok_or_else(|| Error::CorruptModel(format!("missing record lr/{i}")))?,
            hr: hr.ok_or_else(|| Error::CorruptModel(format!("missing record hr/{i}")))?,
            boundaries: std::mem::take(&mut bounds[i]),
        };
        t.validate(scale)?;
        triplets.push(t);
    }
    Ok((scale, triplets))
}
