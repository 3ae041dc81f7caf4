// SPDX-License-Identifier: Apache-2.0

//! The Prover's corpus: file manifest, corpus digest, and the three tool
//! functions (`read_file`, `list_files`, `search_repository`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::crypto::{digest, hex_vec, DecodeError, Digest256, FieldReader, FieldWriter};
use crate::par;

pub const NOT_FOUND: &str = "not_found";
pub const FORBIDDEN: &str = "forbidden";
pub const EMPTY_QUERY: &str = "empty_query";
pub const NOT_A_FILE: &str = "not_a_file";
pub const NOT_A_DIRECTORY: &str = "not_a_directory";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("malformed manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// How manifest entries name their files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    #[default]
    Plain,
    /// Entries carry `hex(sha256(path))` instead of the path itself.
    Hashed,
}

impl PathMode {
    pub fn manifest_name(self, path: &str) -> String {
        match self {
            PathMode::Plain => path.to_string(),
            PathMode::Hashed => digest(path.as_bytes()).to_hex(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub file_digest: Digest256,
    pub byte_length: u64,
}

impl ManifestEntry {
    /// `<hex digest> <byte_length> <path>`; the per-entry record of the manifest file.
    pub fn record_line(&self) -> String {
        format!("{} {} {}", self.file_digest, self.byte_length, self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub corpus_digest: Digest256,
    #[serde(default)]
    pub path_mode: PathMode,
}

/// Digest over the entry records in the given order. Each record line is a
/// canonical field tagged with its zero-based position.
pub fn corpus_hash(entries: &[ManifestEntry]) -> Digest256 {
    let fields: Vec<(String, Vec<u8>)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i.to_string(), e.record_line().into_bytes()))
        .collect();
    digest(&crate::crypto::canonical_encode(&fields).expect("index tags are unique"))
}

impl CorpusManifest {
    pub fn from_entries(mut entries: Vec<ManifestEntry>, path_mode: PathMode) -> Self {
        entries.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        let corpus_digest = corpus_hash(&entries);
        Self {
            entries,
            corpus_digest,
            path_mode,
        }
    }

    pub fn corpus_hash(&self) -> Digest256 {
        corpus_hash(&self.entries)
    }

    /// Entries strictly increasing by path bytes (sorted, no duplicates).
    pub fn is_canonically_ordered(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].path.as_bytes() < w[1].path.as_bytes())
    }

    pub fn entry_for(&self, path: &str) -> Option<&ManifestEntry> {
        let name = self.path_mode.manifest_name(path);
        self.entries
            .binary_search_by(|e| e.path.as_bytes().cmp(name.as_bytes()))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Serializes to the line format: records, optional `#paths hashed`, then `#corpus <hex>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.record_line());
            out.push('\n');
        }
        if self.path_mode == PathMode::Hashed {
            out.push_str("#paths hashed\n");
        }
        out.push_str(&format!("#corpus {}\n", self.corpus_digest));
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        let mut path_mode = PathMode::Plain;
        let mut corpus_digest = None;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |reason: &str| ManifestError::Parse {
                line: line_no,
                reason: reason.to_string(),
            };
            if corpus_digest.is_some() {
                return Err(err("content after #corpus line"));
            }
            if let Some(hex) = line.strip_prefix("#corpus ") {
                corpus_digest = Some(Digest256::from_hex(hex).map_err(|e| err(&e.to_string()))?);
                continue;
            }
            if line == "#paths hashed" {
                path_mode = PathMode::Hashed;
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            let (Some(d), Some(len), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `<digest> <length> <path>`"));
            };
            entries.push(ManifestEntry {
                path: path.to_string(),
                file_digest: Digest256::from_hex(d).map_err(|e| err(&e.to_string()))?,
                byte_length: len.parse().map_err(|_| err("bad byte length"))?,
            });
        }
        let corpus_digest = corpus_digest.ok_or(ManifestError::Parse {
            line: text.lines().count(),
            reason: "missing #corpus line".into(),
        })?;
        Ok(Self {
            entries,
            corpus_digest,
            path_mode,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ManifestOptions {
    pub path_mode: PathMode,
}

#[derive(Debug, Clone)]
pub struct ManifestBuild {
    pub manifest: CorpusManifest,
    pub warnings: Vec<String>,
}

struct CorpusFile {
    rel: String,
    abs: PathBuf,
}

/// Regular files under `root`, relative paths with `/` separators. Symlinks
/// and names that cannot appear in a manifest line are skipped with a warning.
fn collect_files(root: &Path) -> Result<(Vec<CorpusFile>, Vec<String>), ManifestError> {
    let meta = fs::metadata(root).map_err(|source| ManifestError::Unreadable {
        path: root.to_path_buf(),
        source,
    })?;
    if !meta.is_dir() {
        return Err(ManifestError::NotADirectory(root.to_path_buf()));
    }
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for entry in WalkDir::new(root).follow_links(false).min_depth(1) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.into());
            ManifestError::Unreadable {
                path,
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
            }
        })?;
        let rel_path = entry.path().strip_prefix(root).expect("walkdir yields children");
        if entry.path_is_symlink() {
            warnings.push(format!("skipped symlink {}", rel_path.display()));
            continue;
        }
        if !entry.file_type().is_file() {
            continue;
        }
        let Some(rel) = relative_string(rel_path) else {
            warnings.push(format!("skipped unrepresentable name {}", rel_path.display()));
            continue;
        };
        files.push(CorpusFile {
            rel,
            abs: entry.path().to_path_buf(),
        });
    }
    files.sort_by(|a, b| a.rel.as_bytes().cmp(b.rel.as_bytes()));
    Ok((files, warnings))
}

fn relative_string(rel: &Path) -> Option<String> {
    let mut parts = Vec::new();
    for c in rel.components() {
        match c {
            Component::Normal(s) => {
                let s = s.to_str()?;
                if s.contains(['\n', '\r', '/']) {
                    return None;
                }
                parts.push(s);
            }
            _ => return None,
        }
    }
    Some(parts.join("/"))
}

pub fn build_manifest(root: &Path, options: &ManifestOptions) -> Result<ManifestBuild, ManifestError> {
    build_manifest_with(root, options, par::Mode::Auto)
}

/// Files are hashed in parallel under [`par::Mode::Auto`]; the result is
/// identical in either mode.
pub fn build_manifest_with(
    root: &Path,
    options: &ManifestOptions,
    mode: par::Mode,
) -> Result<ManifestBuild, ManifestError> {
    let (files, warnings) = collect_files(root)?;
    let entries = par::try_map(mode, &files, |f| {
        let bytes = fs::read(&f.abs).map_err(|source| ManifestError::Unreadable {
            path: f.abs.clone(),
            source,
        })?;
        Ok(ManifestEntry {
            path: options.path_mode.manifest_name(&f.rel),
            file_digest: digest(&bytes),
            byte_length: bytes.len() as u64,
        })
    })?;
    Ok(ManifestBuild {
        manifest: CorpusManifest::from_entries(entries, options.path_mode),
        warnings,
    })
}

/// Entry kinds recorded in the transcript. Only the first three are tool
/// functions served by the Prover; `Question` and `Verdict` are synthetic
/// entries that put the Verifier's questions and the Auditor's answers in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    ReadFile,
    ListFiles,
    SearchRepository,
    Question,
    Verdict,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::ReadFile => "read_file",
            CallKind::ListFiles => "list_files",
            CallKind::SearchRepository => "search_repository",
            CallKind::Question => "question",
            CallKind::Verdict => "verdict",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "read_file" => CallKind::ReadFile,
            "list_files" => CallKind::ListFiles,
            "search_repository" => CallKind::SearchRepository,
            "question" => CallKind::Question,
            "verdict" => CallKind::Verdict,
            _ => return None,
        })
    }

    pub fn is_tool(self) -> bool {
        matches!(
            self,
            CallKind::ReadFile | CallKind::ListFiles | CallKind::SearchRepository
        )
    }
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub kind: CallKind,
    pub argument: String,
    pub sequence_number: u32,
}

impl ToolCall {
    pub fn new(kind: CallKind, argument: impl Into<String>, sequence_number: u32) -> Self {
        Self {
            kind,
            argument: argument.into(),
            sequence_number,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        FieldWriter::new()
            .put("kind", self.kind.as_str())
            .put("arg", &self.argument)
            .put_u32("seq", self.sequence_number)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = FieldReader::new(bytes)?;
        let kind = decode_kind(&mut r)?;
        let argument = r.take_string("arg")?;
        let sequence_number = r.take_u32("seq")?;
        r.finish()?;
        Ok(Self {
            kind,
            argument,
            sequence_number,
        })
    }
}

fn decode_kind(r: &mut FieldReader) -> Result<CallKind, DecodeError> {
    let s = r.take_string("kind")?;
    CallKind::parse(&s).ok_or(DecodeError::BadValue {
        field: "kind".into(),
        reason: format!("unknown kind {s:?}"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolStatus {
    Ok,
    Error(String),
}

impl ToolStatus {
    pub fn as_str(&self) -> &str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::Error(e) => e,
        }
    }

    fn from_string(s: String) -> Self {
        if s == "ok" {
            ToolStatus::Ok
        } else {
            ToolStatus::Error(s)
        }
    }
}

impl Serialize for ToolStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ToolStatus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(ToolStatus::from_string(String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub kind: CallKind,
    #[serde(with = "hex_vec")]
    pub payload: Vec<u8>,
    pub file_digest: Option<Digest256>,
    pub status: ToolStatus,
}

impl ToolResult {
    pub fn ok(kind: CallKind, payload: Vec<u8>) -> Self {
        let file_digest = (kind == CallKind::ReadFile).then(|| digest(&payload));
        Self {
            kind,
            payload,
            file_digest,
            status: ToolStatus::Ok,
        }
    }

    pub fn paths(kind: CallKind, paths: &[String]) -> Self {
        Self::ok(kind, paths.join("\n").into_bytes())
    }

    pub fn error(kind: CallKind, cause: &str) -> Self {
        Self {
            kind,
            payload: Vec::new(),
            file_digest: None,
            status: ToolStatus::Error(cause.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    /// Path list carried by `list_files` / `search_repository` results.
    pub fn path_list(&self) -> Vec<String> {
        if self.payload.is_empty() {
            return Vec::new();
        }
        String::from_utf8_lossy(&self.payload)
            .split('\n')
            .map(str::to_string)
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        FieldWriter::new()
            .put("kind", self.kind.as_str())
            .put("payload", &self.payload)
            .put("digest", self.file_digest.map(|d| d.0.to_vec()).unwrap_or_default())
            .put("status", self.status.as_str())
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = FieldReader::new(bytes)?;
        let kind = decode_kind(&mut r)?;
        let payload = r.take("payload")?;
        let d = r.take("digest")?;
        let file_digest = match d.len() {
            0 => None,
            32 => Some(Digest256(d.try_into().expect("checked length"))),
            n => {
                return Err(DecodeError::BadValue {
                    field: "digest".into(),
                    reason: format!("length {n}"),
                })
            }
        };
        let status = ToolStatus::from_string(r.take_string("status")?);
        r.finish()?;
        Ok(Self {
            kind,
            payload,
            file_digest,
            status,
        })
    }
}

/// Lowercase alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchIndex {
    token_map: BTreeMap<String, BTreeSet<String>>,
}

impl SearchIndex {
    pub fn build(root: &Path) -> Result<Self, ManifestError> {
        Self::build_with(root, par::Mode::Auto)
    }

    pub fn build_with(root: &Path, mode: par::Mode) -> Result<Self, ManifestError> {
        let (files, _) = collect_files(root)?;
        let per_file = par::try_map(mode, &files, |f| {
            let bytes = fs::read(&f.abs).map_err(|source| ManifestError::Unreadable {
                path: f.abs.clone(),
                source,
            })?;
            Ok((f.rel.clone(), tokenize(&String::from_utf8_lossy(&bytes))))
        })?;
        let mut token_map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (path, tokens) in per_file {
            for t in tokens {
                token_map.entry(t).or_default().insert(path.clone());
            }
        }
        Ok(Self { token_map })
    }

    pub fn paths_for(&self, token: &str) -> Option<&BTreeSet<String>> {
        self.token_map.get(token)
    }

    /// Sorted union of the paths matching any query token.
    pub fn search(&self, query: &str) -> Result<Vec<String>, &'static str> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(EMPTY_QUERY);
        }
        let mut hits = BTreeSet::new();
        for t in &tokens {
            if let Some(paths) = self.token_map.get(t) {
                hits.extend(paths.iter().cloned());
            }
        }
        Ok(hits.into_iter().collect())
    }
}

pub fn build_search_index(root: &Path) -> Result<SearchIndex, ManifestError> {
    SearchIndex::build(root)
}

pub fn search_repository(index: &SearchIndex, query: &str) -> ToolResult {
    match index.search(query) {
        Ok(paths) => ToolResult::paths(CallKind::SearchRepository, &paths),
        Err(e) => ToolResult::error(CallKind::SearchRepository, e),
    }
}

/// Resolves a corpus-relative path, refusing anything that leaves `root`
/// lexically or passes through a symlink.
fn resolve(root: &Path, path: &str) -> Result<PathBuf, &'static str> {
    if path.starts_with('/') || path.contains('\0') || path.contains('\\') {
        return Err(FORBIDDEN);
    }
    let mut parts: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(FORBIDDEN);
                }
            }
            s => parts.push(s),
        }
    }
    let mut current = root.to_path_buf();
    for seg in parts {
        current.push(seg);
        match fs::symlink_metadata(&current) {
            Ok(m) if m.file_type().is_symlink() => return Err(FORBIDDEN),
            Ok(_) => {}
            Err(_) => return Err(NOT_FOUND),
        }
    }
    Ok(current)
}

pub fn read_file(root: &Path, path: &str) -> ToolResult {
    let kind = CallKind::ReadFile;
    let resolved = match resolve(root, path) {
        Ok(p) => p,
        Err(e) => return ToolResult::error(kind, e),
    };
    if resolved.is_dir() {
        return ToolResult::error(kind, NOT_A_FILE);
    }
    match fs::read(&resolved) {
        Ok(bytes) => ToolResult::ok(kind, bytes),
        Err(_) => ToolResult::error(kind, NOT_FOUND),
    }
}

pub fn list_files(root: &Path, path: &str) -> ToolResult {
    let kind = CallKind::ListFiles;
    let resolved = match resolve(root, path) {
        Ok(p) => p,
        Err(e) => return ToolResult::error(kind, e),
    };
    if !resolved.is_dir() {
        return ToolResult::error(kind, NOT_A_DIRECTORY);
    }
    let Ok(rd) = fs::read_dir(&resolved) else {
        return ToolResult::error(kind, NOT_FOUND);
    };
    let mut names: Vec<String> = rd
        .filter_map(Result::ok)
        .filter_map(|e| {
            let ft = e.file_type().ok()?;
            if ft.is_symlink() {
                return None;
            }
            let name = e.file_name().into_string().ok()?;
            if name.contains(['\n', '\r']) {
                return None;
            }
            Some(if ft.is_dir() { format!("{name}/") } else { name })
        })
        .collect();
    names.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    ToolResult::paths(kind, &names)
}

/// Serves the three tool functions over one corpus root.
#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    index: SearchIndex,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self, ManifestError> {
        let index = SearchIndex::build(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn serve(&self, call: &ToolCall) -> ToolResult {
        match call.kind {
            CallKind::ReadFile => read_file(&self.root, &call.argument),
            CallKind::ListFiles => list_files(&self.root, &call.argument),
            CallKind::SearchRepository => search_repository(&self.index, &call.argument),
            k => ToolResult::error(k, "not_a_tool"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (p, c) in files {
            let full = dir.path().join(p);
            fs::create_dir_all(full.parent().unwrap()).unwrap();
            fs::write(full, c).unwrap();
        }
        dir
    }

    #[test]
    fn empty_directory_manifest() {
        let dir = fixture(&[]);
        let m = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
        assert!(m.entries.is_empty());
        assert_eq!(m.corpus_digest, digest(b""));
    }

    #[test]
    fn single_file_manifest() {
        let dir = fixture(&[("a.txt", "x")]);
        let m = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
        assert_eq!(m.entries.len(), 1);
        // sha256("x"), computed independently
        assert_eq!(
            m.entries[0].file_digest.to_hex(),
            "2d711642b726b04401627ca9fbac32f5c8530fb1903cc4db02258717921a4881"
        );
        let again = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
        assert_eq!(m.corpus_digest, again.corpus_digest);
    }

    #[test]
    fn corpus_hash_is_order_sensitive() {
        let dir = fixture(&[("a.txt", "1"), ("b.txt", "2"), ("c/d.txt", "3")]);
        let m = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
        assert!(m.is_canonically_ordered());
        let mut permuted = m.entries.clone();
        permuted.swap(0, 2);
        assert_ne!(corpus_hash(&permuted), m.corpus_digest);
        let mut altered = m.entries.clone();
        altered[1].file_digest.0[0] ^= 1;
        assert_ne!(corpus_hash(&altered), m.corpus_digest);
    }

    #[test]
    fn manifest_text_round_trip() {
        let dir = fixture(&[("a b.txt", "1"), ("z/y.rs", "fn")]);
        let m = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
        let text = m.to_text();
        assert!(text.ends_with(&format!("#corpus {}\n", m.corpus_digest)));
        assert_eq!(CorpusManifest::from_text(&text).unwrap(), m);

        let hashed = build_manifest(
            dir.path(),
            &ManifestOptions {
                path_mode: PathMode::Hashed,
            },
        )
        .unwrap()
        .manifest;
        assert!(hashed.entry_for("z/y.rs").is_some());
        assert!(!hashed.to_text().contains("y.rs"));
        assert_eq!(CorpusManifest::from_text(&hashed.to_text()).unwrap(), hashed);
    }

    #[cfg(unix)]
    #[test]
    fn symlinks_are_skipped_with_warning() {
        let dir = fixture(&[("a.txt", "x")]);
        std::os::unix::fs::symlink("/etc/hostname", dir.path().join("link")).unwrap();
        let b = build_manifest(dir.path(), &Default::default()).unwrap();
        assert_eq!(b.manifest.entries.len(), 1);
        assert_eq!(b.warnings.len(), 1);
        assert_eq!(read_file(dir.path(), "link").status.as_str(), FORBIDDEN);
    }

    #[test]
    fn missing_root_is_an_error() {
        let err = build_manifest(Path::new("/definitely/not/here"), &Default::default());
        assert!(matches!(err, Err(ManifestError::Unreadable { .. })));
    }

    #[test]
    fn read_file_cases() {
        let dir = fixture(&[("a.txt", "x"), ("sub/b.txt", "y")]);
        let r = read_file(dir.path(), "a.txt");
        assert_eq!(r.payload, b"x");
        assert_eq!(r.file_digest, Some(digest(b"x")));
        assert_eq!(read_file(dir.path(), "../etc/secret").status.as_str(), FORBIDDEN);
        assert_eq!(read_file(dir.path(), "/etc/passwd").status.as_str(), FORBIDDEN);
        assert_eq!(read_file(dir.path(), "sub/../../x").status.as_str(), FORBIDDEN);
        assert_eq!(read_file(dir.path(), "sub/../a.txt").payload, b"x");
        assert_eq!(read_file(dir.path(), "missing.txt").status.as_str(), NOT_FOUND);
    }

    #[test]
    fn list_files_cases() {
        let dir = fixture(&[("a.txt", "x"), ("sub/b.txt", "y")]);
        assert_eq!(list_files(dir.path(), "").path_list(), vec!["a.txt", "sub/"]);
        assert_eq!(list_files(dir.path(), "sub").path_list(), vec!["b.txt"]);
        assert_eq!(list_files(dir.path(), "nope").status.as_str(), NOT_FOUND);
        assert_eq!(list_files(dir.path(), "..").status.as_str(), FORBIDDEN);
    }

    #[test]
    fn search_cases() {
        let dir = fixture(&[("a.py", "import flask"), ("b.py", "import os")]);
        let idx = build_search_index(dir.path()).unwrap();
        assert_eq!(search_repository(&idx, "flask").path_list(), vec!["a.py"]);
        assert_eq!(search_repository(&idx, "FLASK").path_list(), vec!["a.py"]);
        assert!(search_repository(&idx, "zzz").path_list().is_empty());
        assert!(search_repository(&idx, "zzz").is_ok());
        assert_eq!(search_repository(&idx, "a !").status.as_str(), EMPTY_QUERY);
        assert_eq!(idx, build_search_index(dir.path()).unwrap());
    }

    #[test]
    fn tool_messages_decode() {
        let call = ToolCall::new(CallKind::SearchRepository, "flask", 3);
        assert_eq!(ToolCall::decode(&call.encode()).unwrap(), call);
        let res = ToolResult::ok(CallKind::ReadFile, b"content".to_vec());
        assert_eq!(ToolResult::decode(&res.encode()).unwrap(), res);
        let err = ToolResult::error(CallKind::ListFiles, NOT_FOUND);
        assert_eq!(ToolResult::decode(&err.encode()).unwrap(), err);
    }

    #[test]
    fn manifest_parallel_matches_sequential() {
        let files: Vec<(String, String)> = (0..40)
            .map(|i| (format!("d{}/f{i}.txt", i % 3), format!("body {i}")))
            .collect();
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dir = fixture(&refs);
        let a = build_manifest_with(dir.path(), &Default::default(), par::Mode::Auto).unwrap();
        let b = build_manifest_with(dir.path(), &Default::default(), par::Mode::Sequential).unwrap();
        assert_eq!(a.manifest, b.manifest);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn manifest_sound_and_search_complete(
            contents in prop::collection::vec("[a-z ]{0,30}", 1..6)
        ) {
            let files: Vec<(String, String)> = contents
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("f{i}.txt"), c.clone()))
                .collect();
            let refs: Vec<(&str, &str)> =
                files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let dir = fixture(&refs);
            let m = build_manifest(dir.path(), &Default::default()).unwrap().manifest;
            for e in &m.entries {
                prop_assert_eq!(read_file(dir.path(), &e.path).file_digest, Some(e.file_digest));
            }
            let idx = build_search_index(dir.path()).unwrap();
            for (path, body) in &files {
                for t in tokenize(body) {
                    prop_assert!(idx.search(&t).unwrap().contains(path));
                }
            }
        }
    }
}
