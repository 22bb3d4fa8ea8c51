//! On-disk layout: `<root>/<id>/{ldr_0.ppm, ldr_1.ppm, ldr_2.ppm,
//! exposures.txt, gt.pfm}`. `exposures.txt` holds one base-2 stop per line
//! (`t = 2^e`); `gt.pfm` may be absent for inference-only samples.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::image::{LdrImage, SampleTriplet};
use super::pfm::{read_pfm, write_pfm};
use super::ppm::{read_ppm, write_ppm};

/// Parses three exposure stops into times in seconds.
pub fn parse_exposures(text: &str) -> Result<[f64; 3]> {
    let stops: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            // Accept the typographic minus as well as '-'.
            l.replace('\u{2212}', "-")
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("exposure line {}: invalid stop '{l}'", i + 1)))
        })
        .collect::<Result<_>>()?;
    if stops.len() != 3 {
        return Err(Error::Config(format!("expected 3 exposure stops, found {}", stops.len())));
    }
    if !(stops[0] < stops[1] && stops[1] < stops[2]) {
        return Err(Error::Config(format!(
            "exposure stops must be strictly increasing (short, medium, long), got {stops:?}"
        )));
    }
    Ok([stops[0].exp2(), stops[1].exp2(), stops[2].exp2()])
}

/// Loads one sample directory. The ground truth, when present, is normalised
/// to `[0, 1]`.
pub fn load_sample(dir: impl AsRef<Path>) -> Result<SampleTriplet> {
    let dir = dir.as_ref();
    let dataset_err = |msg: String| Error::Dataset {
        path: dir.to_path_buf(),
        msg,
    };
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let exp_path = dir.join("exposures.txt");
    let text = std::fs::read_to_string(&exp_path).map_err(|e| Error::io(format!("reading {}", exp_path.display()), e))?;
    let times = parse_exposures(&text).map_err(|e| dataset_err(e.to_string()))?;
    let mut ldr = Vec::with_capacity(3);
    for (i, t) in times.iter().enumerate() {
        let p = dir.join(format!("ldr_{i}.ppm"));
        if !p.is_file() {
            return Err(dataset_err(format!("missing ldr_{i}.ppm")));
        }
        ldr.push(read_ppm(&p)?.with_exposure(*t)?);
    }
    let gt_path = dir.join("gt.pfm");
    let gt = if gt_path.is_file() {
        Some(read_pfm(&gt_path)?.normalized())
    } else {
        None
    };
    let ldr: [LdrImage; 3] = ldr.try_into().expect("three exposures");
    SampleTriplet::new(id, ldr, gt).map_err(|e| dataset_err(e.to_string()))
}

/// Loads every sample directory under `root`, ordered by id.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<SampleTriplet>> {
    let root = root.as_ref();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(format!("reading dataset root {}", root.display()), e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", root.display()), e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            msg: "no sample directories found".into(),
        });
    }
    dirs.par_iter().map(load_sample).collect()
}

/// Writes a sample in the layout read by [`load_sample`]. Exposure times must
/// be powers of two. The ground truth is written in original radiance units.
pub fn write_sample(dir: impl AsRef<Path>, s: &SampleTriplet, maxval: u16) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut stops = String::new();
    for (i, img) in s.ldr().iter().enumerate() {
        write_ppm(dir.join(format!("ldr_{i}.ppm")), img, maxval)?;
        let e = img.exposure().log2();
        if (e.exp2() - img.exposure()).abs() > 1e-12 * img.exposure() {
            return Err(Error::Config(format!("exposure {} is not representable as a stop", img.exposure())));
        }
        stops.push_str(&format!("{e}\n"));
    }
    let p = dir.join("exposures.txt");
    std::fs::write(&p, stops).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    if let Some(gt) = s.ground_truth() {
        write_pfm(dir.join("gt.pfm"), &gt.denormalized())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdr::HdrImage;

    #[test]
    fn stops_are_base_two() {
        assert_eq!(parse_exposures("-2\n0\n2").unwrap(), [0.25, 1.0, 4.0]);
        assert_eq!(parse_exposures("\u{2212}2\n0\n2\n").unwrap(), [0.25, 1.0, 4.0]);
        assert!(parse_exposures("0\n0\n2").is_err());
        assert!(parse_exposures("2\n0\n-2").is_err());
        assert!(parse_exposures("0\n2").is_err());
        assert!(parse_exposures("0\nx\n2").is_err());
    }

    fn sample(gt: bool) -> SampleTriplet {
        let img = |t| LdrImage::new(2, 3, (0..18).map(|i| i as f32 / 17.0).collect(), t).unwrap();
        let gt = gt.then(|| HdrImage::new(2, 3, (0..18).map(|i| i as f32 * 0.5).collect()).unwrap().normalized());
        SampleTriplet::new("s", [img(0.25), img(1.0), img(4.0)], gt).unwrap()
    }

    #[test]
    fn write_then_load() {
        let root = tempfile::tempdir().unwrap();
        write_sample(root.path().join("b"), &sample(true), 255).unwrap();
        write_sample(root.path().join("a"), &sample(false), 255).unwrap();
        let ds = load_dataset(root.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].id, "a");
        assert!(ds[0].ground_truth().is_none());
        assert_eq!(ds[1].exposures(), [0.25, 1.0, 4.0]);
        let gt = ds[1].ground_truth().unwrap();
        let orig = sample(true);
        let orig = orig.ground_truth().unwrap();
        for (a, b) in gt.pixels().iter().zip(orig.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_ldr_is_an_error() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("x");
        write_sample(&dir, &sample(false), 255).unwrap();
        std::fs::remove_file(dir.join("ldr_2.ppm")).unwrap();
        let err = load_sample(&dir).unwrap_err();
        assert!(err.to_string().contains("ldr_2"), "{err}");
    }
}
