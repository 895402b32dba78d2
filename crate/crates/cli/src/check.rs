use std::collections::BTreeSet;
use std::path::Path;

use pdml_core::script::{self, validate::free_symbols, validate::levenshtein, Diagnostic};

use crate::CliError;

/// Diagnostics for `source`. Without an explicit external list every free
/// symbol counts as external, except ones a small edit away from a component
/// or function name and no longer than it, which are reported as likely
/// typos. Longer names are left alone: `volaterm` is a parameter, not a
/// misspelt `volterm`.
pub fn diagnose(source: &str, externals: Option<&[String]>) -> Vec<Diagnostic> {
    let ast = match script::parse_source(source) {
        Ok(a) => a,
        Err(d) => return vec![d],
    };
    let mut diags = Vec::new();
    let externals: BTreeSet<String> = match externals {
        Some(list) => list.iter().cloned().collect(),
        None => {
            let known: Vec<&str> = ast
                .components
                .iter()
                .map(|c| c.name.as_str())
                .chain(ast.function_defs.iter().map(|f| f.name.as_str()))
                .collect();
            let free = free_symbols(&ast);
            for (name, span) in &free {
                if let Some(k) = known
                    .iter()
                    .find(|k| name.len() <= k.len() && levenshtein(name, k) <= (k.len() / 4).max(1))
                {
                    diags.push(Diagnostic::new(*span, format!("unresolved symbol {name} (did you mean `{k}`?)")));
                }
            }
            free.into_keys().collect()
        }
    };
    if let Err(mut ds) = script::validate(&ast, &externals) {
        diags.append(&mut ds);
    }
    diags.sort_by_key(|d| (d.span.line, d.span.col));
    diags
}

pub fn run(path: &Path, externals: Option<&[String]>) -> Result<(), CliError> {
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let diags = diagnose(&source, externals);
    if diags.is_empty() {
        println!("{}: ok", path.display());
        return Ok(());
    }
    let file = path.display().to_string();
    let rendered: Vec<String> = diags.iter().map(|d| d.render(&file)).collect();
    // Script diagnostics exit with 1, like other input errors.
    Err(CliError::Config(rendered.join("\n")))
}
