# Test package for mechsqueeze
