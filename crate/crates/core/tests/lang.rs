use corpusforge::lang::{
    composition_report, default_lexicons, parse_lexicons, Language, LanguageClassifier, DEFAULT_SCORE_FLOOR,
};

fn classify(c: &LanguageClassifier, text: &str, hint: Option<&str>) -> Option<Language> {
    c.classify(text, text.split_whitespace().count(), hint).language
}

#[test]
fn shipped_lexicons_on_running_text() {
    let c = LanguageClassifier::new(&default_lexicons(), DEFAULT_SCORE_FLOOR).unwrap();
    let cases = [
        ("Hva skal vi gjøre nå? Dere har bare blitt sittende her.", Language::Nb),
        ("Kva skal me gjere no? Eg veit ikkje korleis det har vorte slik.", Language::Nn),
        ("What is the reason that they have not been here with you?", Language::En),
        ("Hvad har I gjort? Det er blevet meget sent, og vi har kun en time.", Language::Da),
        ("Jag vet inte vad hon ska göra, men det var mycket bra.", Language::Sv),
    ];
    for (text, want) in cases {
        assert_eq!(classify(&c, text, None), Some(want), "{text}");
    }
}

#[test]
fn hint_is_only_a_fallback() {
    let c = LanguageClassifier::new(&default_lexicons(), DEFAULT_SCORE_FLOOR).unwrap();
    assert_eq!(classify(&c, "Oslo 1905 Bergen Trondheim", Some("nn")), Some(Language::Nn));
    assert_eq!(classify(&c, "Oslo 1905 Bergen Trondheim", None), None);
    assert_eq!(classify(&c, "Oslo 1905 Bergen Trondheim", Some("fi")), Some(Language::Other));
    assert_eq!(classify(&c, "the cat and the dog", Some("nb")), Some(Language::En));
}

#[test]
fn sixty_forty_by_words() {
    let c = LanguageClassifier::new(&default_lexicons(), DEFAULT_SCORE_FLOOR).unwrap();
    let nb = ["hva noen mye dere bare nå"; 10].join(" ");
    let en = ["the and of to"; 10].join(" ");
    let report = composition_report([nb.as_str(), en.as_str()].map(|t| {
        let n = t.split_whitespace().count() as u64;
        (classify(&c, t, None), n)
    }));
    assert_eq!(report.total_words, 100);
    assert!((report.fraction(Language::Nb) - 0.6).abs() < 1e-12);
    assert!((report.fraction(Language::En) - 0.4).abs() < 1e-12);
    assert_eq!(report.unknown.words, 0);
}

#[test]
fn custom_lexicon_file() {
    let lex = parse_lexicons("# test\nnb\tfoo\t1\nen\tbar\t1\n").unwrap();
    let c = LanguageClassifier::new(&lex, DEFAULT_SCORE_FLOOR).unwrap();
    assert_eq!(classify(&c, "foo foo bar", None), Some(Language::Nb));
    assert_eq!(classify(&c, "hva noen mye", None), None);
    assert!(parse_lexicons("nb\tfoo\t-1\n").is_err());
    assert!(parse_lexicons("nb\tFoo\t1\n").is_err());
}
