use std::fs;
use std::path::{Path, PathBuf};

use super::corpus::{ClassSplit, SceneSample};
use super::semantic::{SemanticSource, SemanticTable};
use super::DataError;

/// A corpus directory read back from disk.
#[derive(Debug)]
pub struct CorpusOnDisk {
    pub scenes: Vec<SceneSample>,
    pub class_names: Vec<String>,
    pub split: ClassSplit,
    pub semantics: SemanticTable,
}

/// Writes a corpus directory: `scene_<id>.csv` per scene, `classes.csv`
/// (id,name,seen), and `embeddings.csv` (class_id,v0..). Returns the paths
/// written. Refuses a non-empty directory unless `force` is set.
pub fn write_corpus(
    dir: &Path,
    scenes: &[SceneSample],
    class_names: &[String],
    split: &ClassSplit,
    semantics: &SemanticTable,
    force: bool,
) -> Result<Vec<PathBuf>, DataError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(DataError::Config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    for scene in scenes {
        let path = dir.join(format!("scene_{}.csv", scene.scene_id));
        let mut body = String::from("x,y,z,label\n");
        for (p, l) in scene.points.iter().zip(&scene.labels) {
            body.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], l));
        }
        fs::write(&path, body)?;
        written.push(path);
    }

    let classes_path = dir.join("classes.csv");
    let mut body = String::from("id,name,seen\n");
    for (id, name) in class_names.iter().enumerate() {
        body.push_str(&format!("{},{},{}\n", id, name, split.is_seen(id)));
    }
    fs::write(&classes_path, body)?;
    written.push(classes_path);

    let emb_path = dir.join("embeddings.csv");
    let mut header = String::from("class_id");
    for j in 0..semantics.dim {
        header.push_str(&format!(",v{j}"));
    }
    header.push('\n');
    let mut body = header;
    for (id, vec) in semantics.vectors.iter().enumerate() {
        body.push_str(&id.to_string());
        for v in vec {
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    fs::write(&emb_path, body)?;
    written.push(emb_path);

    Ok(written)
}

/// Loads a corpus directory written by [`write_corpus`]. Scenes are sorted
/// by id.
pub fn load_corpus(dir: &Path) -> Result<CorpusOnDisk, DataError> {
    let mut scene_paths: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(idx) = name
            .strip_prefix("scene_")
            .and_then(|rest| rest.strip_suffix(".csv"))
        {
            let id = idx.parse::<usize>().map_err(|_| DataError::Format {
                path: path.display().to_string(),
                detail: "scene file name must be scene_<id>.csv".into(),
            })?;
            scene_paths.push((id, path.clone()));
        }
    }
    scene_paths.sort_by_key(|(id, _)| *id);
    if scene_paths.is_empty() {
        return Err(DataError::Format {
            path: dir.display().to_string(),
            detail: "no scene_<id>.csv files found".into(),
        });
    }

    let mut scenes = Vec::with_capacity(scene_paths.len());
    for (id, path) in scene_paths {
        scenes.push(read_scene(&path, id)?);
    }

    let (class_names, seen_flags) = read_classes(&dir.join("classes.csv"))?;
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (id, &is_seen) in seen_flags.iter().enumerate() {
        if is_seen {
            seen.push(id);
        } else {
            unseen.push(id);
        }
    }
    let split = ClassSplit { seen, unseen };

    let semantics = read_embeddings(&dir.join("embeddings.csv"), class_names.len())?;

    for scene in &scenes {
        for &l in &scene.labels {
            if l >= class_names.len() {
                return Err(DataError::Format {
                    path: dir.display().to_string(),
                    detail: format!(
                        "scene {} labels class {l}, but classes.csv declares {}",
                        scene.scene_id,
                        class_names.len()
                    ),
                });
            }
        }
    }

    Ok(CorpusOnDisk {
        scenes,
        class_names,
        split,
        semantics,
    })
}

fn read_scene(path: &Path, scene_id: usize) -> Result<SceneSample, DataError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "x,y,z,label" {
        return Err(DataError::Format {
            path: display,
            detail: format!("expected header x,y,z,label, got `{header}`"),
        });
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: expected 4 fields", line_no + 2),
            });
        }
        let parse = |s: &str| -> Result<f64, DataError> {
            s.trim().parse::<f64>().map_err(|e| DataError::Format {
                path: display.clone(),
                detail: format!("line {}: {e}", line_no + 2),
            })
        };
        let p = [parse(fields[0])?, parse(fields[1])?, parse(fields[2])?];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: non-finite coordinate", line_no + 2),
            });
        }
        let label = fields[3].trim().parse::<usize>().map_err(|e| DataError::Format {
            path: display.clone(),
            detail: format!("line {}: {e}", line_no + 2),
        })?;
        points.push(p);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(DataError::Format {
            path: display,
            detail: "scene holds no points".into(),
        });
    }
    Ok(SceneSample {
        scene_id,
        points,
        labels,
    })
}

fn read_classes(path: &Path) -> Result<(Vec<String>, Vec<bool>), DataError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut names = Vec::new();
    let mut seen = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 {
            if line.trim() != "id,name,seen" {
                return Err(DataError::Format {
                    path: display,
                    detail: format!("expected header id,name,seen, got `{line}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: expected 3 fields", line_no + 1),
            });
        }
        let id: usize = fields[0].trim().parse().map_err(|e| DataError::Format {
            path: display.clone(),
            detail: format!("line {}: {e}", line_no + 1),
        })?;
        if id != names.len() {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: class ids must be dense and ordered", line_no + 1),
            });
        }
        names.push(fields[1].trim().to_string());
        seen.push(match fields[2].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(DataError::Format {
                    path: display,
                    detail: format!("line {}: seen must be true/false, got `{other}`", line_no + 1),
                })
            }
        });
    }
    if names.is_empty() {
        return Err(DataError::Format {
            path: display,
            detail: "classes.csv declares no classes".into(),
        });
    }
    Ok((names, seen))
}

fn read_embeddings(path: &Path, n_classes: usize) -> Result<SemanticTable, DataError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("class_id,v0") {
        return Err(DataError::Format {
            path: display,
            detail: format!("expected header class_id,v0,..., got `{header}`"),
        });
    }
    let dim = header.split(',').count() - 1;
    let mut vectors = vec![Vec::new(); n_classes];
    let mut filled = vec![false; n_classes];
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: expected {} fields", line_no + 2, dim + 1),
            });
        }
        let id: usize = fields[0].trim().parse().map_err(|e| DataError::Format {
            path: display.clone(),
            detail: format!("line {}: {e}", line_no + 2),
        })?;
        if id >= n_classes {
            return Err(DataError::Format {
                path: display,
                detail: format!("line {}: class_id {id} out of range", line_no + 2),
            });
        }
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.trim().parse::<f64>()).collect();
        vectors[id] = values.map_err(|e| DataError::Format {
            path: display.clone(),
            detail: format!("line {}: {e}", line_no + 2),
        })?;
        filled[id] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(DataError::Format {
            path: display,
            detail: format!("class {missing} has no embedding row"),
        });
    }
    Ok(SemanticTable {
        dim,
        vectors,
        source: SemanticSource::Loaded,
    })
}
