use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, Corpus, RegionProposal, Scene, SceneObject, WorldConfig, WorldError};
use crate::codec::{ByteReader, ByteWriter, CodecError, Container};

pub const CORPUS_KIND: &str = "corpus";
const NO_OBJECT: u32 = u32::MAX;

#[derive(Serialize, Deserialize)]
pub(crate) struct CorpusHeader {
    pub world: WorldConfig,
    pub seed: u64,
    pub n_scenes: usize,
}

fn put_box(w: &mut ByteWriter, b: &BBox) {
    w.f64(b.cx);
    w.f64(b.cy);
    w.f64(b.w);
    w.f64(b.h);
}

fn get_box(r: &mut ByteReader) -> Result<BBox, CodecError> {
    Ok(BBox {
        cx: r.f64("bbox")?,
        cy: r.f64("bbox")?,
        w: r.f64("bbox")?,
        h: r.f64("bbox")?,
    })
}

pub fn encode_scenes(w: &mut ByteWriter, scenes: &[Scene]) {
    w.u64(scenes.len() as u64);
    for s in scenes {
        w.u64(s.id);
        w.f64s(&s.scene_features);
        w.u32(s.objects.len() as u32);
        for o in &s.objects {
            w.u32(o.category as u32);
            put_box(w, &o.bbox);
        }
        w.u32(s.proposals.len() as u32);
        for p in &s.proposals {
            put_box(w, &p.bbox);
            w.f64s(&p.features);
            w.u32(p.gt_label as u32);
            w.u32(p.pred_label as u32);
            w.f64(p.pred_confidence);
            w.u32(p.object.map_or(NO_OBJECT, |o| o as u32));
        }
    }
}

pub fn decode_scenes(r: &mut ByteReader) -> Result<Vec<Scene>, CodecError> {
    let n = r.u64("scene count")? as usize;
    // each scene needs at least 20 bytes; reject absurd counts before allocating
    if n > r.remaining() / 20 + 1 {
        return Err(CodecError::Truncated("scenes"));
    }
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64("scene id")?;
        let scene_features = r.f64s("scene features")?;
        let n_obj = r.u32("object count")? as usize;
        let mut objects = Vec::with_capacity(n_obj.min(1024));
        for _ in 0..n_obj {
            let category = r.u32("category")? as usize;
            objects.push(SceneObject {
                category,
                bbox: get_box(r)?,
            });
        }
        let n_prop = r.u32("proposal count")? as usize;
        let mut proposals = Vec::with_capacity(n_prop.min(4096));
        for _ in 0..n_prop {
            let bbox = get_box(r)?;
            let features = r.f64s("features")?;
            let gt_label = r.u32("gt label")? as usize;
            let pred_label = r.u32("pred label")? as usize;
            let pred_confidence = r.f64("confidence")?;
            let object = match r.u32("object index")? {
                NO_OBJECT => None,
                o if (o as usize) < n_obj => Some(o as usize),
                o => return Err(CodecError::Malformed(format!("object index {o} out of range"))),
            };
            proposals.push(RegionProposal {
                bbox,
                features,
                gt_label,
                pred_label,
                pred_confidence,
                object,
            });
        }
        scenes.push(Scene {
            id,
            objects,
            proposals,
            scene_features,
        });
    }
    Ok(scenes)
}

pub(crate) fn corpus_container(kind: &str, corpus: &Corpus, extra: impl FnOnce(&mut ByteWriter)) -> Container {
    let header = CorpusHeader {
        world: corpus.config.clone(),
        seed: corpus.seed,
        n_scenes: corpus.scenes.len(),
    };
    let mut w = ByteWriter::new();
    encode_scenes(&mut w, &corpus.scenes);
    extra(&mut w);
    Container {
        kind: kind.to_string(),
        header: serde_json::to_string(&header).expect("header serializes"),
        payload: w.into_inner(),
    }
}

pub(crate) fn parse_corpus<'a>(container: &'a Container) -> Result<(Corpus, ByteReader<'a>), WorldError> {
    let header: CorpusHeader =
        serde_json::from_str(&container.header).map_err(|e| WorldError::Header(e.to_string()))?;
    let mut r = ByteReader::new(&container.payload);
    let scenes = decode_scenes(&mut r)?;
    if scenes.len() != header.n_scenes {
        return Err(WorldError::Header(format!(
            "header announces {} scenes, payload has {}",
            header.n_scenes,
            scenes.len()
        )));
    }
    Ok((
        Corpus {
            config: header.world,
            seed: header.seed,
            scenes,
        },
        r,
    ))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), WorldError> {
    corpus_container(CORPUS_KIND, corpus, |_| {}).write(path)?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, WorldError> {
    let container = Container::read(path, CORPUS_KIND)?;
    let (corpus, r) = parse_corpus(&container)?;
    if r.remaining() != 0 {
        return Err(CodecError::Malformed("trailing scene bytes".into()).into());
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::World;

    fn corpus(n: usize) -> Corpus {
        let cfg = WorldConfig {
            num_categories: 3,
            feature_dim: 6,
            prototype_scale: 2.5,
            ..Default::default()
        };
        let world = World::new(cfg).unwrap();
        world
            .generate_corpus(n.max(1), 11)
            .map(|mut c| {
                c.scenes.truncate(n);
                c
            })
            .unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = corpus(15);
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn empty_corpus_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let c = corpus(0);
        save_corpus(&c, &path).unwrap();
        assert!(load_corpus(&path).unwrap().scenes.is_empty());
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_corpus(&corpus(5), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(load_corpus(&path).is_err(), "cut at {cut}");
        }
    }
}
