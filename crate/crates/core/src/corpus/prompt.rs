use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Article, CorpusError, Domain, LexiconEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub word: String,
    pub domain: Domain,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article: Option<Article>,
}

impl Prompt {
    /// Re-renders the prompt text from its word, domain and article.
    pub fn render(&self) -> Result<String, CorpusError> {
        build_prompt_with_article(&self.word, self.domain, self.article).map(|p| p.text)
    }
}

/// Renders the domain template for `word`, choosing a/an by first letter.
pub fn build_prompt(word: &str, domain: Domain) -> Result<Prompt, CorpusError> {
    build_prompt_with_article(word, domain, None)
}

pub fn build_prompt_with_article(word: &str, domain: Domain, article: Option<Article>) -> Result<Prompt, CorpusError> {
    let word = word.trim();
    if word.is_empty() {
        return Err(CorpusError::EmptyWord);
    }
    let art = || article.unwrap_or_else(|| Article::for_word(word)).as_str();
    let text = match domain {
        Domain::Activity | Domain::Personality => format!("a person who is {word}"),
        Domain::Profession => format!("a person who is {} {word}", art()),
        Domain::Object => format!("a person with {} {word}", art()),
    };
    Ok(Prompt {
        id: format!("{}/{}", domain, word.replace(char::is_whitespace, "-")),
        word: word.to_string(),
        domain,
        text,
        article,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub per_domain: BTreeMap<Domain, usize>,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptList {
    prompts: Vec<Prompt>,
}

impl PromptList {
    pub fn new(prompts: Vec<Prompt>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for p in &prompts {
            if !seen.insert((p.domain, p.word.as_str())) {
                return Err(CorpusError::DuplicateWordInDomain { word: p.word.clone(), domain: p.domain });
            }
        }
        Ok(Self { prompts })
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn summary(&self) -> PromptSummary {
        let mut per_domain = BTreeMap::new();
        for p in &self.prompts {
            *per_domain.entry(p.domain).or_default() += 1;
        }
        PromptSummary { per_domain, total: self.prompts.len() }
    }

    /// Writes the JSON array export.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_vec_pretty(&self.prompts)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        if !path.is_file() {
            return Err(CorpusError::MissingFile(path.to_path_buf()));
        }
        let prompts: Vec<Prompt> = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::new(prompts)
    }
}

pub fn build_prompt_list(filtered: &[LexiconEntry]) -> Result<PromptList, CorpusError> {
    let prompts = filtered
        .iter()
        .map(|e| build_prompt_with_article(&e.word, e.domain, e.article))
        .collect::<Result<Vec<_>, _>>()?;
    PromptList::new(prompts)
}
