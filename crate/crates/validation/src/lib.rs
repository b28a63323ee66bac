//! Holds the `acceptance` test target, which trains and checks the full
//! pipeline end to end. It runs after the library and CLI suites.
