//! Static report emission: an index page plus one page per business
//! showing each review with its matched terms highlighted, the top
//! topical words, and the recommended photos with captions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use revpic_core::corpus::{load_businesses, load_photos, load_reviews, PhotoRecord, ReviewRecord};
use revpic_core::recommender::{representative_terms, MatchPhase};
use revpic_core::topics::TopicModel;

use crate::pipeline::{effective_captions, read_jsonl, BestCaptionRow, PipelineCtx, RecommendationRow};

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Escape `text` while wrapping alphabetic runs that tokenize to a
/// matched term in `<mark>`.
fn highlight(text: &str, terms: &std::collections::BTreeSet<String>, lowercase: bool) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut run = String::new();
    let flush_run = |run: &mut String, out: &mut String| {
        if run.is_empty() {
            return;
        }
        let key = if lowercase { run.to_lowercase() } else { run.clone() };
        if terms.contains(&key) {
            out.push_str("<mark>");
            out.push_str(&escape(run));
            out.push_str("</mark>");
        } else {
            out.push_str(&escape(run));
        }
        run.clear();
    };
    for c in text.chars() {
        if c.is_alphabetic() {
            run.push(c);
        } else {
            flush_run(&mut run, &mut out);
            out.push_str(&escape(&c.to_string()));
        }
    }
    flush_run(&mut run, &mut out);
    out
}

fn page_name(business_id: &str, used: &mut HashMap<String, usize>) -> String {
    let sanitized: String = business_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let count = used.entry(sanitized.clone()).or_insert(0);
    *count += 1;
    if *count == 1 {
        format!("business_{sanitized}.html")
    } else {
        format!("business_{sanitized}_{count}.html")
    }
}

const STYLE: &str = "<style>\n\
body { font-family: sans-serif; max-width: 60em; margin: 2em auto; padding: 0 1em; }\n\
mark { background: #ffe08a; }\n\
.review { border: 1px solid #ccc; border-radius: 6px; padding: 0.8em 1em; margin: 1em 0; }\n\
.topics { color: #444; font-style: italic; }\n\
.phase { color: #666; font-size: 0.85em; }\n\
.no-matches { color: #a33; }\n\
</style>\n";

pub fn emit_report(ctx: &PipelineCtx, dir: &Path) -> anyhow::Result<()> {
    let layout = &ctx.layout;
    let businesses = load_businesses(&layout.businesses(), false)?;
    let reviews = load_reviews(&layout.reviews())?;
    let photos = load_photos(&layout.photos_labeled())?.records;
    let best: Vec<BestCaptionRow> = read_jsonl(&layout.best_captions())?;
    let recommendations: Vec<RecommendationRow> = read_jsonl(&layout.recommendations())?;
    let model = TopicModel::load(&layout.model())?;
    let tokenizer = ctx.config.tokenizer_config()?;

    let photos = effective_captions(&photos, &best);
    let caption_of: HashMap<&str, &str> = photos
        .iter()
        .map(|p| (p.photo_id.as_str(), p.caption.as_str()))
        .collect();
    let rec_of: HashMap<&str, &RecommendationRow> = recommendations
        .iter()
        .map(|r| (r.review_id.as_str(), r))
        .collect();
    let mut reviews_by_business: HashMap<&str, Vec<&ReviewRecord>> = HashMap::new();
    for review in &reviews {
        reviews_by_business
            .entry(review.business_id.as_str())
            .or_default()
            .push(review);
    }
    let mut photos_by_business: HashMap<&str, Vec<&PhotoRecord>> = HashMap::new();
    for photo in &photos {
        photos_by_business
            .entry(photo.business_id.as_str())
            .or_default()
            .push(photo);
    }

    fs::create_dir_all(dir)?;
    let mut used_names = HashMap::new();
    let mut index_rows = String::new();
    let t = ctx.config.recommender.t as usize;

    for business in &businesses {
        let page = page_name(&business.business_id, &mut used_names);
        let business_reviews = reviews_by_business
            .get(business.business_id.as_str())
            .cloned()
            .unwrap_or_default();
        let n_photos = photos_by_business
            .get(business.business_id.as_str())
            .map(|p| p.len())
            .unwrap_or(0);
        writeln!(
            index_rows,
            "<tr><td><a href=\"{page}\">{}</a></td><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape(&business.name),
            escape(&business.business_id),
            business_reviews.len(),
            n_photos,
        )?;

        let mut body = String::new();
        writeln!(
            body,
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<title>{}</title>\n{STYLE}</head><body>",
            escape(&business.name)
        )?;
        writeln!(
            body,
            "<p><a href=\"index.html\">&larr; index</a></p>\n<h1>{}</h1>\n<p>{} reviews, {} photos.</p>",
            escape(&business.name),
            business_reviews.len(),
            n_photos
        )?;
        for review in business_reviews {
            let rec = rec_of.get(review.review_id.as_str());
            let matched: std::collections::BTreeSet<String> = rec
                .map(|r| {
                    r.photos
                        .iter()
                        .flat_map(|p| p.matched_terms.iter().cloned())
                        .collect()
                })
                .unwrap_or_default();
            let terms = representative_terms(&model, review, &tokenizer, t)?;
            let term_list: Vec<String> = terms.terms.iter().map(|(w, _)| escape(w)).collect();

            writeln!(body, "<div class=\"review\">")?;
            writeln!(body, "<h3>Review {}</h3>", escape(&review.review_id))?;
            writeln!(
                body,
                "<p class=\"text\">{}</p>",
                highlight(&review.text, &matched, ctx.config.tokenizer.lowercase)
            )?;
            writeln!(
                body,
                "<p class=\"topics\">Top topical words: {}</p>",
                term_list.join(", ")
            )?;
            match rec {
                Some(rec) if !rec.photos.is_empty() => {
                    writeln!(body, "<ul class=\"photos\">")?;
                    for photo in &rec.photos {
                        let caption = caption_of.get(photo.photo_id.as_str()).copied().unwrap_or("");
                        let phase = match photo.phase {
                            MatchPhase::Both => "both",
                            MatchPhase::CaptionOnly => "caption only",
                        };
                        writeln!(
                            body,
                            "<li><code>{}</code> <span class=\"phase\">[{phase}; {}]</span> &mdash; {}</li>",
                            escape(&photo.photo_id),
                            photo
                                .matched_terms
                                .iter()
                                .map(|w| escape(w))
                                .collect::<Vec<_>>()
                                .join(", "),
                            escape(caption),
                        )?;
                    }
                    writeln!(body, "</ul>")?;
                }
                _ => {
                    writeln!(body, "<p class=\"no-matches\">No matching photos found.</p>")?;
                }
            }
            writeln!(body, "</div>")?;
        }
        writeln!(body, "</body></html>")?;
        fs::write(dir.join(&page), body)?;
    }

    let mut index = String::new();
    writeln!(
        index,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<title>Review photo recommendations</title>\n{STYLE}</head><body>"
    )?;
    writeln!(index, "<h1>Review photo recommendations</h1>")?;
    writeln!(
        index,
        "<p>{} businesses, {} reviews, {} photos.</p>",
        businesses.len(),
        reviews.len(),
        photos.len()
    )?;
    writeln!(
        index,
        "<table>\n<tr><th>Business</th><th>Id</th><th>Reviews</th><th>Photos</th></tr>"
    )?;
    index.push_str(&index_rows);
    writeln!(index, "</table>\n</body></html>")?;
    fs::write(dir.join("index.html"), index)?;
    Ok(())
}
