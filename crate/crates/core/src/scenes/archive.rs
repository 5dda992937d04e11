//! Scene archive: `<id>.png` plus `<id>.json` (layout JSON) per scene and an
//! `index.json` listing the pairs.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{LayoutSpec, Palette, SceneError};
use crate::flowmatch::ToyScene;
use crate::icbp::{LayoutJson, LayoutPrompt};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub id: String,
    pub image: String,
    pub layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub scenes: Vec<ArchiveEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.display().to_string(), source }
}

fn fmt_err(path: &Path, message: impl ToString) -> SceneError {
    SceneError::Format { path: path.display().to_string(), message: message.to_string() }
}

fn to_png(scene: &ToyScene) -> RgbImage {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(scene.width as u32, scene.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let c = |ch: usize| q(scene.get(ch.min(scene.channels - 1), y, x));
        Rgb([c(0), c(1), c(2)])
    })
}

pub fn write_archive(dir: &Path, scenes: &[(String, LayoutSpec, ToyScene)], palette: &Palette) -> Result<ArchiveIndex, SceneError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = ArchiveIndex { scenes: Vec::new() };
    for (id, spec, scene) in scenes {
        let entry = ArchiveEntry { id: id.clone(), image: format!("{id}.png"), layout: format!("{id}.json") };
        let img_path = dir.join(&entry.image);
        to_png(scene).save(&img_path).map_err(|e| fmt_err(&img_path, e))?;
        let layout = spec.to_prompt(palette).to_layout();
        let lay_path = dir.join(&entry.layout);
        let text = serde_json::to_string_pretty(&layout).map_err(|e| fmt_err(&lay_path, e))?;
        std::fs::write(&lay_path, text).map_err(io_err(&lay_path))?;
        index.scenes.push(entry);
    }
    let idx_path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).map_err(|e| fmt_err(&idx_path, e))?;
    std::fs::write(&idx_path, text).map_err(io_err(&idx_path))?;
    Ok(index)
}

/// Reads an archive back; pixel values come back quantized to 1/255.
pub fn read_archive(dir: &Path, palette: &Palette) -> Result<Vec<(String, LayoutSpec, ToyScene)>, SceneError> {
    let idx_path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&idx_path).map_err(io_err(&idx_path))?;
    let index: ArchiveIndex = serde_json::from_str(&text).map_err(|e| fmt_err(&idx_path, e))?;
    let mut out = Vec::new();
    for entry in index.scenes {
        let img_path = dir.join(&entry.image);
        let img = image::open(&img_path).map_err(|e| fmt_err(&img_path, e))?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut scene = ToyScene::filled(h, w, &[0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                scene.set(c, y as usize, x as usize, f64::from(px[c]) / 255.0);
            }
        }
        let lay_path = dir.join(&entry.layout);
        let text = std::fs::read_to_string(&lay_path).map_err(io_err(&lay_path))?;
        let layout: LayoutJson = serde_json::from_str(&text).map_err(|e| fmt_err(&lay_path, e))?;
        let prompt = LayoutPrompt::from_layout(&layout)?;
        let spec = LayoutSpec::from_prompt(&prompt, palette, h, w)?;
        out.push((entry.id, spec, scene));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{render, sample_layout, LayoutConfig};

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pal = Palette::default();
        let scenes: Vec<_> = (0..3)
            .map(|i| {
                let spec = sample_layout(i, &LayoutConfig::default(), &pal).unwrap();
                let scene = render(&spec, &pal);
                (format!("scene_{i:04}"), spec, scene)
            })
            .collect();
        let index = write_archive(dir.path(), &scenes, &pal).unwrap();
        assert_eq!(index.scenes[1].image, "scene_0001.png");
        let back = read_archive(dir.path(), &pal).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in scenes.iter().zip(&back) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            // palette colours and mid-grey survive 8-bit quantization to 1/255
            for (x, y) in a.2.data.iter().zip(&b.2.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
