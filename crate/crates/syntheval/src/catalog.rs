//! Lexicon and template files on disk.
//!
//! A lexicon is a `NAME.lex` file, one entry per line. A template is a
//! `name.json` file holding a [`TemplateSource`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use syntheval_core::lexicon::{validate_lexicon, Lexicon, LexiconError, LexiconSet};
use syntheval_core::template::{Template, TemplateError, TemplateSource};

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Lexicon { path: PathBuf, source: LexiconError },
    #[error("{path}: {message}")]
    Template { path: PathBuf, message: String },
    #[error("template {0:?} not found")]
    NotFound(String),
    #[error("template {0:?} already exists")]
    Exists(String),
    #[error("invalid template name {0:?}")]
    InvalidName(String),
    #[error(transparent)]
    Invalid(#[from] TemplateError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io { path: path.to_path_buf(), source }
}

/// Lexicon name from a file path: the file stem.
pub fn lexicon_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, CatalogError> {
    load_lexicon_as(path.as_ref(), &lexicon_name(path.as_ref()))
}

pub fn load_lexicon_as(path: &Path, name: &str) -> Result<Lexicon, CatalogError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    validate_lexicon(name, &raw).map_err(|source| CatalogError::Lexicon { path: path.to_path_buf(), source })
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CatalogError> {
    let mut paths = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(paths),
        Err(e) => return Err(CatalogError::Io { path: dir.to_path_buf(), source: e }),
    };
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == ext) && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Every `*.lex` file in `dir`; a missing directory is an empty set.
pub fn load_lexicon_dir(dir: impl AsRef<Path>) -> Result<LexiconSet, CatalogError> {
    sorted_entries(dir.as_ref(), "lex")?.iter().map(load_lexicon).collect()
}

pub fn parse_template(path: &Path, text: &str) -> Result<Template, CatalogError> {
    serde_json::from_str(text).map_err(|e| CatalogError::Template { path: path.to_path_buf(), message: e.to_string() })
}

pub fn load_template(path: impl AsRef<Path>) -> Result<Template, CatalogError> {
    let path = path.as_ref();
    parse_template(path, &fs::read_to_string(path).map_err(io_err(path))?)
}

/// Template names double as file names, so they are restricted.
pub fn is_valid_template_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !name.starts_with('.')
}

fn template_json(template: &Template) -> String {
    let mut s = serde_json::to_string_pretty(&TemplateSource::from(template.clone())).expect("template serializes");
    s.push('\n');
    s
}

/// Templates directory with create/update/delete.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    dir: PathBuf,
}

impl TemplateStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.json"))
    }

    /// All templates, ordered by name. Unparseable files are errors.
    pub fn list(&self) -> Result<Vec<Template>, CatalogError> {
        let mut out: Vec<Template> =
            sorted_entries(&self.dir, "json")?.iter().map(load_template).collect::<Result<_, _>>()?;
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Result<Template, CatalogError> {
        if !is_valid_template_name(name) {
            return Err(CatalogError::NotFound(name.into()));
        }
        let path = self.path_of(name);
        if !path.is_file() {
            return Err(CatalogError::NotFound(name.into()));
        }
        load_template(path)
    }

    fn write(&self, template: &Template) -> Result<(), CatalogError> {
        if !is_valid_template_name(&template.name) {
            return Err(CatalogError::InvalidName(template.name.clone()));
        }
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.path_of(&template.name);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, template_json(template)).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn create(&self, template: &Template) -> Result<(), CatalogError> {
        if is_valid_template_name(&template.name) && self.path_of(&template.name).exists() {
            return Err(CatalogError::Exists(template.name.clone()));
        }
        self.write(template)
    }

    /// Replaces `name`; renaming moves the file.
    pub fn update(&self, name: &str, template: &Template) -> Result<(), CatalogError> {
        self.get(name)?;
        if template.name != name && self.path_of(&template.name).exists() {
            return Err(CatalogError::Exists(template.name.clone()));
        }
        self.write(template)?;
        if template.name != name {
            let old = self.path_of(name);
            fs::remove_file(&old).map_err(io_err(&old))?;
        }
        Ok(())
    }

    pub fn delete(&self, name: &str) -> Result<(), CatalogError> {
        self.get(name)?;
        let path = self.path_of(name);
        fs::remove_file(&path).map_err(io_err(&path))
    }
}
