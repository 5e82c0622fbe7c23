"""Small synopsis plugins used by the engine and protocol tests."""
