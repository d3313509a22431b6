# Integration tests package marker
